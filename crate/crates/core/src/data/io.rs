//! Binary sample container and JSON manifest I/O.
//!
//! Sample layout (little-endian): magic "VLDX" | u32 version=1 | u32 L |
//! u32 n_mels | u32 T_a | u32 M | f32 blocks in row-major order
//! (speaker_motion [L x 56], mel [n_mels x T_a], listener_motion [L x 56],
//! va [M x 2]) | u32 description byte length | UTF-8 description |
//! i32 template_id (-1 when absent).
//!
//! Generated motion files reuse the scheme with magic "VLDM": u32 version |
//! u32 L | f32 frames [L x 56].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::data::{
    DatasetManifest, DyadSample, IntensityTrack, MelFeatures, MotionSequence, TextAnnotation,
    MOTION_DIMS, N_MELS,
};
use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 4] = b"VLDX";
pub const SAMPLE_VERSION: u32 = 1;
pub const MOTION_MAGIC: &[u8; 4] = b"VLDM";
pub const MOTION_VERSION: u32 = 1;

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

fn write_matrix(w: &mut impl Write, mat: &Array2<f32>, path: &str) -> Result<()> {
    for v in mat.iter() {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_matrix(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    path: &str,
    what: &str,
) -> Result<Array2<f32>> {
    let mut data = vec![0u8; rows * cols * 4];
    read_exact(r, &mut data, path, what)?;
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|_| Error::Malformed {
        path: path.to_string(),
        detail: format!("{what} block shape ({rows}, {cols}) inconsistent"),
    })
}

pub fn save_sample(path: &Path, sample: &DyadSample) -> Result<()> {
    sample.validate()?;
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(&pstr, e);

    let l = sample.frames() as u32;
    let t_a = sample.speaker_audio.audio_frames() as u32;
    let m = sample.tags.n_tags() as u32;

    w.write_all(SAMPLE_MAGIC).map_err(io_err)?;
    w.write_all(&SAMPLE_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&l.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(N_MELS as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&t_a.to_le_bytes()).map_err(io_err)?;
    w.write_all(&m.to_le_bytes()).map_err(io_err)?;
    write_matrix(&mut w, &sample.speaker_motion.frames, &pstr)?;
    write_matrix(&mut w, &sample.speaker_audio.grid, &pstr)?;
    write_matrix(&mut w, &sample.listener_motion.frames, &pstr)?;
    write_matrix(&mut w, &sample.tags.va, &pstr)?;
    let desc = sample.text.description.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(desc).map_err(io_err)?;
    let template_id = sample.text.template_id.unwrap_or(-1);
    w.write_all(&template_id.to_le_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Loads a sample; `sample_id` is taken from the file stem since the
/// container itself does not repeat it.
pub fn load_sample(path: &Path) -> Result<DyadSample> {
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &pstr, "magic")?;
    if &magic != SAMPLE_MAGIC {
        return Err(Error::Malformed {
            path: pstr,
            detail: format!("bad magic {magic:?}, expected \"VLDX\""),
        });
    }
    let version = read_u32(&mut r, &pstr, "version")?;
    if version != SAMPLE_VERSION {
        return Err(Error::VersionMismatch {
            path: pstr,
            found: version,
            expected: SAMPLE_VERSION,
        });
    }
    let l = read_u32(&mut r, &pstr, "frame count")? as usize;
    let n_mels = read_u32(&mut r, &pstr, "mel bins")? as usize;
    let t_a = read_u32(&mut r, &pstr, "audio frames")? as usize;
    let m = read_u32(&mut r, &pstr, "tag count")? as usize;
    if n_mels != N_MELS {
        return Err(Error::Malformed {
            path: pstr,
            detail: format!("mel bins {n_mels} != {N_MELS}"),
        });
    }
    if t_a != 2 * l || m * 6 != l {
        return Err(Error::Malformed {
            path: pstr,
            detail: format!("inconsistent header shapes: L={l}, T_a={t_a}, M={m}"),
        });
    }

    let speaker = read_matrix(&mut r, l, MOTION_DIMS, &pstr, "speaker motion")?;
    let mel = read_matrix(&mut r, n_mels, t_a, &pstr, "mel grid")?;
    let listener = read_matrix(&mut r, l, MOTION_DIMS, &pstr, "listener motion")?;
    let va = read_matrix(&mut r, m, 2, &pstr, "intensity track")?;

    let desc_len = read_u32(&mut r, &pstr, "description length")? as usize;
    let mut desc_bytes = vec![0u8; desc_len];
    read_exact(&mut r, &mut desc_bytes, &pstr, "description")?;
    let description = String::from_utf8(desc_bytes).map_err(|_| Error::Malformed {
        path: pstr.clone(),
        detail: "description is not valid UTF-8".into(),
    })?;
    let mut tid = [0u8; 4];
    read_exact(&mut r, &mut tid, &pstr, "template id")?;
    let template_id = i32::from_le_bytes(tid);

    let sample_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("sample")
        .to_string();

    let sample = DyadSample {
        sample_id,
        speaker_motion: MotionSequence::new(speaker)?,
        speaker_audio: MelFeatures::new(mel)?,
        listener_motion: MotionSequence::new(listener)?,
        text: TextAnnotation::new(description, (template_id >= 0).then_some(template_id))?,
        tags: IntensityTrack::new(va)?,
    };
    sample.validate()?;
    Ok(sample)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), manifest)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(file))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest entry's sample, resolving its path relative to the
/// manifest's directory.
pub fn load_manifest_sample(manifest_dir: &Path, entry_path: &str) -> Result<DyadSample> {
    let path = manifest_dir.join(entry_path);
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    load_sample(&path)
}

pub fn save_motion(path: &Path, motion: &MotionSequence) -> Result<()> {
    let pstr = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(&pstr, e);
    w.write_all(MOTION_MAGIC).map_err(io_err)?;
    w.write_all(&MOTION_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(motion.len() as u32).to_le_bytes()).map_err(io_err)?;
    write_matrix(&mut w, &motion.frames, &pstr)?;
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<MotionSequence> {
    let pstr = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingFile(pstr));
    }
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, &pstr, "magic")?;
    if &magic != MOTION_MAGIC {
        return Err(Error::Malformed {
            path: pstr,
            detail: format!("bad magic {magic:?}, expected \"VLDM\""),
        });
    }
    let version = read_u32(&mut r, &pstr, "version")?;
    if version != MOTION_VERSION {
        return Err(Error::VersionMismatch {
            path: pstr,
            found: version,
            expected: MOTION_VERSION,
        });
    }
    let l = read_u32(&mut r, &pstr, "frame count")? as usize;
    let frames = read_matrix(&mut r, l, MOTION_DIMS, &pstr, "motion frames")?;
    MotionSequence::new(frames)
}
