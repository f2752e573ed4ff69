//! Run-directory plumbing: lock files, input hashing and `run.json`.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use vldn_core::config::RunConfig;
use vldn_core::error::{Error, Result};

/// Exclusive lock file guarding a run directory; removed on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = dir.join(".vldn.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "run directory {} is locked ({} exists); remove the lock file if no run is active",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let pstr = path.display().to_string();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(&pstr, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    input_hashes: Vec<InputHash>,
}

#[derive(Serialize)]
struct InputHash {
    name: String,
    path: String,
    sha256: String,
}

/// Writes `run.json` capturing the resolved config and hashes of every
/// input file, sufficient to replay the command.
pub fn write_run_json(
    target: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[(&str, &Path)],
) -> Result<()> {
    let mut input_hashes = Vec::with_capacity(inputs.len());
    for (name, path) in inputs {
        input_hashes.push(InputHash {
            name: name.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
    }
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        input_hashes,
    };
    let pstr = target.display().to_string();
    let file = std::fs::File::create(target).map_err(|e| Error::io(&pstr, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &record)?;
    Ok(())
}
