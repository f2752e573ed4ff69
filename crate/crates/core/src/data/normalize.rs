//! Per-channel z-score normalization and the tag upsampling bridge.
//!
//! The matrix-level operations are generic over the scalar so the model
//! pipeline can run them at f32 while tests exercise the 64-bit contract
//! (denormalize(normalize(x)) = x to 1e-10).

use ndarray::Array2;

use crate::data::{IntensityTrack, MotionSequence, NormalizationStats, FRAMES_PER_TAG, MOTION_DIMS};
use crate::error::{Error, Result};
use crate::nn::real::Real;

/// Per-channel mean/std over all frames of the given sequences
/// (population standard deviation).
pub fn compute_stats<'a>(
    sequences: impl IntoIterator<Item = &'a MotionSequence>,
) -> Result<NormalizationStats> {
    let mut sum = vec![0.0f64; MOTION_DIMS];
    let mut sum_sq = vec![0.0f64; MOTION_DIMS];
    let mut n = 0usize;
    for seq in sequences {
        for row in seq.frames.rows() {
            for (c, &v) in row.iter().enumerate() {
                sum[c] += v as f64;
                sum_sq[c] += (v as f64) * (v as f64);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Domain("cannot compute stats over zero frames".into()));
    }
    let mut mean = Vec::with_capacity(MOTION_DIMS);
    let mut std = Vec::with_capacity(MOTION_DIMS);
    for c in 0..MOTION_DIMS {
        let m = sum[c] / n as f64;
        let var = (sum_sq[c] / n as f64 - m * m).max(0.0);
        mean.push(m as f32);
        // Guard: a dead channel still needs an invertible transform.
        std.push((var.sqrt() as f32).max(1e-6));
    }
    Ok(NormalizationStats { mean, std })
}

fn check_stats(stats: &NormalizationStats, cols: usize) -> Result<()> {
    if stats.mean.len() != cols || stats.std.len() != cols {
        return Err(Error::shape(format!(
            "stats carry {}/{} channels, data has {cols}",
            stats.mean.len(),
            stats.std.len()
        )));
    }
    if stats.std.iter().any(|&s| s <= 0.0) {
        return Err(Error::Domain("std entries must be strictly positive".into()));
    }
    Ok(())
}

/// (x - mean) / std per channel.
pub fn normalize_mat<F: Real>(
    frames: &Array2<F>,
    stats: &NormalizationStats,
) -> Result<Array2<F>> {
    check_stats(stats, frames.ncols())?;
    let mut out = frames.clone();
    for mut row in out.rows_mut() {
        for c in 0..row.len() {
            row[c] = (row[c] - F::from_f32(stats.mean[c])) / F::from_f32(stats.std[c]);
        }
    }
    Ok(out)
}

/// Inverse of [`normalize_mat`].
pub fn denormalize_mat<F: Real>(
    frames: &Array2<F>,
    stats: &NormalizationStats,
) -> Result<Array2<F>> {
    check_stats(stats, frames.ncols())?;
    let mut out = frames.clone();
    for mut row in out.rows_mut() {
        for c in 0..row.len() {
            row[c] = row[c] * F::from_f32(stats.std[c]) + F::from_f32(stats.mean[c]);
        }
    }
    Ok(out)
}

/// Storage-typed convenience wrapper.
pub fn normalize(seq: &MotionSequence, stats: &NormalizationStats) -> Result<MotionSequence> {
    MotionSequence::new(normalize_mat(&seq.frames, stats)?)
}

/// Storage-typed convenience wrapper.
pub fn denormalize(seq: &MotionSequence, stats: &NormalizationStats) -> Result<MotionSequence> {
    MotionSequence::new(denormalize_mat(&seq.frames, stats)?)
}

/// Zero-order hold from 5 Hz tags to 30 fps frames: each tag row is
/// repeated [`FRAMES_PER_TAG`] times in order. `l` must equal 6 * M.
pub fn hold_upsample_tags(tags: &IntensityTrack, l: usize) -> Result<Array2<f32>> {
    let m = tags.n_tags();
    if l != m * FRAMES_PER_TAG {
        return Err(Error::shape(format!(
            "target length {l} must equal {FRAMES_PER_TAG} x tag count {m}"
        )));
    }
    let mut out = Array2::zeros((l, 2));
    for t in 0..l {
        let src = t / FRAMES_PER_TAG;
        out[(t, 0)] = tags.va[(src, 0)];
        out[(t, 1)] = tags.va[(src, 1)];
    }
    Ok(out)
}
