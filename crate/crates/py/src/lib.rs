//! Python bindings for the listener-dynamics toolkit.
//!
//! Exposes the dataset generator, sample I/O, text encoding, the noise
//! schedule, metrics and checkpoint-driven sampling. Matrices cross the
//! boundary as (flat row-major list, rows, cols) triples to keep the module
//! dependency-free on the Python side.

// pyfunction wrappers expand to PyErr->PyErr conversions
#![allow(clippy::useless_conversion)]

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use vldn_core::data::io as vio;
use vldn_core::data::normalize::{denormalize_mat, hold_upsample_tags};
use vldn_core::data::synth;
use vldn_core::data::{IntensityTrack, MotionSequence};
use vldn_core::diffusion::{cosine_schedule, ddim_sample};
use vldn_core::metrics;
use vldn_core::model::{CondInputs, ListenerModel};
use vldn_core::predictor::IntensityPredictor;
use vldn_core::text::{TextEncoder, ToyTextEncoder};

fn py_err(err: vldn_core::Error) -> PyErr {
    match err {
        vldn_core::Error::Io { .. }
        | vldn_core::Error::MissingFile(_)
        | vldn_core::Error::Truncated { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type FlatMatrix = (Vec<f32>, usize, usize);

fn flat(m: &Array2<f32>) -> FlatMatrix {
    (m.iter().cloned().collect(), m.nrows(), m.ncols())
}

fn unflat(values: Vec<f64>, rows: usize, cols: usize) -> PyResult<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| PyValueError::new_err(format!("bad matrix shape: {e}")))
}

/// One dyadic sample with row-major matrices.
#[pyclass]
struct DyadSample {
    #[pyo3(get)]
    sample_id: String,
    #[pyo3(get)]
    speaker_motion: FlatMatrix,
    #[pyo3(get)]
    mel: FlatMatrix,
    #[pyo3(get)]
    listener_motion: FlatMatrix,
    #[pyo3(get)]
    va: FlatMatrix,
    #[pyo3(get)]
    text: String,
    #[pyo3(get)]
    template_id: Option<i32>,
}

/// Generate a synthetic dataset; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, n_samples, frames, seed, train_fraction=0.8))]
fn generate_dataset(
    out_dir: PathBuf,
    n_samples: usize,
    frames: usize,
    seed: u64,
    train_fraction: f64,
) -> PyResult<String> {
    synth::generate_synthetic_dataset(&out_dir, n_samples, frames, seed, train_fraction)
        .map_err(py_err)?;
    Ok(out_dir.join("manifest.json").display().to_string())
}

#[pyfunction]
fn load_sample(path: PathBuf) -> PyResult<DyadSample> {
    let sample = vio::load_sample(&path).map_err(py_err)?;
    Ok(DyadSample {
        sample_id: sample.sample_id,
        speaker_motion: flat(&sample.speaker_motion.frames),
        mel: flat(&sample.speaker_audio.grid),
        listener_motion: flat(&sample.listener_motion.frames),
        va: flat(&sample.tags.va),
        text: sample.text.description,
        template_id: sample.text.template_id,
    })
}

#[pyfunction]
fn load_motion(path: PathBuf) -> PyResult<FlatMatrix> {
    let motion = vio::load_motion(&path).map_err(py_err)?;
    Ok(flat(&motion.frames))
}

/// Zero-order hold of a 5 Hz VA track to frame rate.
#[pyfunction]
fn upsample_tags(va: Vec<f32>, m: usize, frames: usize) -> PyResult<FlatMatrix> {
    let track = IntensityTrack::new(
        Array2::from_shape_vec((m, 2), va)
            .map_err(|e| PyValueError::new_err(format!("bad VA shape: {e}")))?,
    )
    .map_err(py_err)?;
    let up = hold_upsample_tags(&track, frames).map_err(py_err)?;
    Ok(flat(&up))
}

/// Deterministic token embeddings for a description.
#[pyfunction]
fn encode_text(description: &str, d_text: usize) -> PyResult<(Vec<f64>, usize, usize)> {
    let encoder = ToyTextEncoder::new(d_text);
    let tokens: vldn_core::text::TokenEmbeddingSeq<f64> =
        encoder.encode(description).map_err(py_err)?;
    Ok((
        tokens.vectors.iter().cloned().collect(),
        tokens.vectors.nrows(),
        tokens.vectors.ncols(),
    ))
}

/// Cumulative signal coefficients of the cosine schedule.
#[pyfunction]
#[pyo3(signature = (t_steps, s=0.008))]
fn cosine_alpha_bar(t_steps: usize, s: f64) -> PyResult<Vec<f64>> {
    Ok(cosine_schedule(t_steps, s).map_err(py_err)?.alpha_bar)
}

/// Fréchet distance between two frame sets given as flat row-major lists.
#[pyfunction]
fn frechet_distance(
    frames_a: Vec<f64>,
    rows_a: usize,
    frames_b: Vec<f64>,
    rows_b: usize,
    dims: usize,
) -> PyResult<f64> {
    let a = unflat(frames_a, rows_a, dims)?;
    let b = unflat(frames_b, rows_b, dims)?;
    let stats_a = metrics::GaussianStats::fit(&a.view()).map_err(py_err)?;
    let stats_b = metrics::GaussianStats::fit(&b.view()).map_err(py_err)?;
    metrics::frechet_distance(&stats_a, &stats_b).map_err(py_err)
}

#[pyfunction]
fn temporal_variance(frames: Vec<f64>, rows: usize, dims: usize) -> PyResult<f64> {
    let m = unflat(frames, rows, dims)?;
    metrics::temporal_variance(&[m.view()]).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (listener, speaker, rows, dims, differenced=true))]
fn rpcc(
    listener: Vec<f64>,
    speaker: Vec<f64>,
    rows: usize,
    dims: usize,
    differenced: bool,
) -> PyResult<f64> {
    let l = unflat(listener, rows, dims)?;
    let s = unflat(speaker, rows, dims)?;
    let mode = if differenced {
        metrics::RpccMode::Differenced
    } else {
        metrics::RpccMode::Raw
    };
    metrics::rpcc(&l.view(), &s.view(), mode).map_err(py_err)
}

/// Predict VA tags from raw listener motion using a frozen predictor
/// checkpoint plus the dataset's normalization stats.
#[pyfunction]
fn predict_va(
    predictor_ckpt: PathBuf,
    manifest_path: PathBuf,
    motion: Vec<f32>,
    rows: usize,
) -> PyResult<FlatMatrix> {
    let predictor = IntensityPredictor::<f32>::load_frozen(&predictor_ckpt).map_err(py_err)?;
    let manifest = vio::load_manifest(&manifest_path).map_err(py_err)?;
    let raw = Array2::from_shape_vec((rows, vldn_core::data::MOTION_DIMS), motion)
        .map_err(|e| PyValueError::new_err(format!("bad motion shape: {e}")))?;
    let normalized =
        vldn_core::data::normalize::normalize_mat(&raw, &manifest.normalization_stats)
            .map_err(py_err)?;
    let (va, _) = predictor.forward(&normalized).map_err(py_err)?;
    Ok(flat(&va))
}

/// Sample listener motion from a trained checkpoint, conditioning on a
/// dataset sample with optional constant VA overrides.
#[pyfunction]
#[pyo3(signature = (checkpoint, dataset_dir, sample_id, seed, t_steps=100, ddim_steps=25, valence=None, arousal=None))]
#[allow(clippy::too_many_arguments)]
fn sample_listener(
    checkpoint: PathBuf,
    dataset_dir: PathBuf,
    sample_id: &str,
    seed: u64,
    t_steps: usize,
    ddim_steps: usize,
    valence: Option<f32>,
    arousal: Option<f32>,
) -> PyResult<FlatMatrix> {
    let (model, _) = ListenerModel::<f32>::load(&checkpoint).map_err(py_err)?;
    let manifest = vio::load_manifest(&dataset_dir.join("manifest.json")).map_err(py_err)?;
    let entry = manifest
        .entry(sample_id)
        .ok_or_else(|| PyValueError::new_err(format!("sample `{sample_id}` not in manifest")))?;
    let mut sample = vio::load_manifest_sample(&dataset_dir, &entry.path).map_err(py_err)?;
    if valence.is_some() || arousal.is_some() {
        let mut va = sample.tags.va.clone();
        if let Some(v) = valence {
            va.column_mut(0).fill(v);
        }
        if let Some(a) = arousal {
            va.column_mut(1).fill(a);
        }
        sample.tags = IntensityTrack::new(va).map_err(py_err)?;
    }
    let encoder = model.text_encoder();
    let inputs =
        CondInputs::<f32>::from_sample(&sample, &manifest.normalization_stats, &encoder)
            .map_err(py_err)?;
    let (bundle, _) = model.encode_conditions(&inputs).map_err(py_err)?;
    let schedule = cosine_schedule(t_steps, 0.008).map_err(py_err)?;
    let normalized = ddim_sample(
        |h, t| model.denoise(h, &bundle, t, schedule.t_steps),
        &schedule,
        ddim_steps,
        seed,
        model.cfg.frames,
    )
    .map_err(py_err)?;
    let raw = denormalize_mat(&normalized, &manifest.normalization_stats).map_err(py_err)?;
    let motion = MotionSequence::new(raw).map_err(py_err)?;
    Ok(flat(&motion.frames))
}

#[pymodule]
fn vldn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<DyadSample>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_sample, m)?)?;
    m.add_function(wrap_pyfunction!(load_motion, m)?)?;
    m.add_function(wrap_pyfunction!(upsample_tags, m)?)?;
    m.add_function(wrap_pyfunction!(encode_text, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_alpha_bar, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_variance, m)?)?;
    m.add_function(wrap_pyfunction!(rpcc, m)?)?;
    m.add_function(wrap_pyfunction!(predict_va, m)?)?;
    m.add_function(wrap_pyfunction!(sample_listener, m)?)?;
    m.add("MOTION_DIMS", vldn_core::data::MOTION_DIMS)?;
    m.add("N_MELS", vldn_core::data::N_MELS)?;
    m.add("FPS", vldn_core::data::FPS)?;
    Ok(())
}
