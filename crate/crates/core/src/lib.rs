//! Listener head-dynamics generation toolkit.
//!
//! The crate covers the full desk-scale pipeline: a synthetic dyadic dataset
//! generator with a bit-exact binary sample format, a conditional diffusion
//! transformer that maps speaker motion, speaker audio features, text
//! descriptions and valence/arousal intensity tags to listener head motion,
//! a frozen intensity predictor used for emotional supervision, and an
//! evaluation metric suite (FD, P-FD, MSE, SID, Var, rPCC).

pub mod config;
pub mod data;
pub mod denoiser;
pub mod model;
pub mod predictor;
pub mod diffusion;
pub mod metrics;
pub mod emotion;
pub mod fusion;
pub mod text;
pub mod error;
pub mod nn;

pub use error::{Error, Result};
