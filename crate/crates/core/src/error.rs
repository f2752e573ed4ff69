//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or sequence shapes are inconsistent with the operation contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A value was outside its documented domain (e.g. VA outside [-1, 1]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Binary container carries an unsupported version stamp.
    #[error("version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },

    /// File ended before the declared payload was read.
    #[error("truncated file {path}: {detail}")]
    Truncated { path: String, detail: String },

    /// Container header or payload is internally inconsistent.
    #[error("malformed file {path}: {detail}")]
    Malformed { path: String, detail: String },

    /// A referenced input file does not exist.
    #[error("missing file: {0}")]
    MissingFile(String),

    /// Non-finite values where finite numbers are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
