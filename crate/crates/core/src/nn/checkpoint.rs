//! Version-stamped checkpoint container.
//!
//! Layout (little-endian throughout):
//!   magic "VLCK" | u32 version | u32 header_len | header JSON bytes |
//!   u32 n_tensors | repeated { u32 name_len | name bytes | u32 rows |
//!   u32 cols | rows*cols f32 values }.
//!
//! The JSON header carries `kind` ("denoiser" | "predictor"), a config echo,
//! a `frozen` flag and the epoch the checkpoint was written at. Tensor data
//! is always stored as f32; an f64 model is narrowed on save.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::real::Real;
use crate::nn::store::{Mat, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Tensors as (name, matrix) pairs in file order.
pub type NamedTensors = Vec<(String, Mat<f32>)>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub frozen: bool,
    pub epoch: u64,
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                path: path.to_string(),
                detail: format!("while reading {what}"),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &str, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_checkpoint<F: Real>(
    path: &Path,
    header: &CheckpointHeader,
    store: &ParamStore<F>,
) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(&pstr, e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    let header_bytes = serde_json::to_vec(header)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        let (rows, cols) = tensor.dim();
        w.write_all(&(rows as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(cols as u32).to_le_bytes()).map_err(io_err)?;
        for v in tensor.iter() {
            w.write_all(&v.as_f32().to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads header + named tensors without binding them to a model.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, NamedTensors)> {
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &pstr, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Malformed {
            path: pstr,
            detail: format!("bad magic {magic:?}, expected \"VLCK\""),
        });
    }
    let version = read_u32(&mut r, &pstr, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: pstr,
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = read_u32(&mut r, &pstr, "header length")? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact(&mut r, &mut header_bytes, &pstr, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let n_tensors = read_u32(&mut r, &pstr, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for i in 0..n_tensors {
        let name_len = read_u32(&mut r, &pstr, "tensor name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, &pstr, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Malformed {
            path: pstr.clone(),
            detail: format!("tensor {i} name is not UTF-8"),
        })?;
        let rows = read_u32(&mut r, &pstr, "tensor rows")? as usize;
        let cols = read_u32(&mut r, &pstr, "tensor cols")? as usize;
        let mut data = vec![0u8; rows * cols * 4];
        read_exact(&mut r, &mut data, &pstr, &format!("tensor `{name}` data"))?;
        let values: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mat = Mat::from_shape_vec((rows, cols), values).map_err(|_| Error::Malformed {
            path: pstr.clone(),
            detail: format!("tensor `{name}` shape ({rows}, {cols}) inconsistent with payload"),
        })?;
        tensors.push((name, mat));
    }
    Ok((header, tensors))
}

/// Loads tensors into an already-constructed store; every checkpoint tensor
/// must match a registered parameter by name and shape, and vice versa.
pub fn load_into_store<F: Real>(
    path: &Path,
    expected_kind: &str,
    store: &mut ParamStore<F>,
) -> Result<CheckpointHeader> {
    let (header, tensors) = read_checkpoint(path)?;
    if header.kind != expected_kind {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: format!(
                "checkpoint kind `{}` does not match expected `{expected_kind}`",
                header.kind
            ),
        });
    }
    if tensors.len() != store.len() {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: format!(
                "checkpoint carries {} tensors, model expects {}",
                tensors.len(),
                store.len()
            ),
        });
    }
    for (name, mat) in tensors {
        store.set_by_name(&name, mat.mapv(F::from_f32))?;
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_store() -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        ps.add("a.w", Mat::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 * 0.5));
        ps.add("a.b", Mat::from_elem((1, 3), -1.25f32));
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ps = toy_store();
        let header = CheckpointHeader {
            kind: "denoiser".into(),
            config: serde_json::json!({"d_model": 8}),
            frozen: false,
            epoch: 3,
        };
        save_checkpoint(&path, &header, &ps).unwrap();
        let mut ps2 = toy_store();
        ps2.get_mut(crate::nn::store::ParamId(0)).fill(0.0);
        let header2 = load_into_store(&path, "denoiser", &mut ps2).unwrap();
        assert_eq!(header, header2);
        for (id_a, id_b) in ps.ids().zip(ps2.ids()) {
            let a = ps.get(id_a);
            let b = ps2.get(id_b);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn truncated_file_is_reported_not_a_crash() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ps = toy_store();
        let header = CheckpointHeader {
            kind: "predictor".into(),
            config: serde_json::Value::Null,
            frozen: true,
            epoch: 0,
        };
        save_checkpoint(&path, &header, &ps).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        match read_checkpoint(&path) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ps = toy_store();
        let header = CheckpointHeader {
            kind: "predictor".into(),
            config: serde_json::Value::Null,
            frozen: true,
            epoch: 0,
        };
        save_checkpoint(&path, &header, &ps).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // bump version field
        std::fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path) {
            Err(Error::VersionMismatch { found: 9, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ps = toy_store();
        let header = CheckpointHeader {
            kind: "predictor".into(),
            config: serde_json::Value::Null,
            frozen: true,
            epoch: 0,
        };
        save_checkpoint(&path, &header, &ps).unwrap();
        let mut ps2 = toy_store();
        assert!(load_into_store(&path, "denoiser", &mut ps2).is_err());
    }
}
