//! Synthetic dyadic dataset generator.
//!
//! Couplings are explicit so downstream control tests have ground truth:
//! arousal scales the amplitude of the listener's reaction to the speaker
//! (gain strictly increasing in A), valence shifts the expression baseline
//! with matching sign, and the mel energy envelope follows a fixed monotone
//! function of the speaker's pose velocity. Everything is a pure function of
//! (seed, sample index, frame count), so regeneration is byte-identical.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::data::io::{save_manifest, save_sample};
use crate::data::{
    DatasetManifest, DyadSample, IntensityTrack, ManifestEntry, MelFeatures, MotionSequence,
    NormalizationStats, SplitAssignment, TextAnnotation, EXPR_DIMS, FRAMES_PER_TAG, MOTION_DIMS,
    N_MELS,
};
use crate::error::{Error, Result};

/// Reaction amplitude as a function of arousal; strictly increasing on [-1, 1].
pub fn arousal_gain(a: f32) -> f32 {
    0.3 + 0.35 * (a + 1.0)
}

/// Expression baseline offset per unit valence.
pub const VALENCE_OFFSET: f32 = 0.5;

/// Delay (frames) between speaker motion and the listener's reaction.
const REACTION_DELAY: usize = 6;
/// Box-filter width for smoothing.
const SMOOTH_WINDOW: usize = 5;

/// Forces constant tags during synthesis; used by control-effect tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct TagOverride {
    pub valence: Option<f32>,
    pub arousal: Option<f32>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index.wrapping_add(1))))
}

fn box_smooth_columns(x: &Array2<f32>, window: usize) -> Array2<f32> {
    let l = x.nrows() as isize;
    let half = (window / 2) as isize;
    let mut out = Array2::zeros(x.dim());
    for c in 0..x.ncols() {
        for t in 0..l {
            let lo = (t - half).max(0);
            let hi = (t + half).min(l - 1);
            let mut acc = 0.0f32;
            for s in lo..=hi {
                acc += x[(s as usize, c)];
            }
            out[(t as usize, c)] = acc / (hi - lo + 1) as f32;
        }
    }
    out
}

/// Per-channel mixture of 2-4 sinusoids plus low-pass noise. The first
/// component is always fast (>= 2.5 Hz) so short windows stay informative,
/// and component amplitudes are normalized to a fixed channel energy.
fn speaker_motion(rng: &mut ChaCha20Rng, l: usize) -> Array2<f32> {
    let fps = crate::data::FPS as f32;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = Array2::zeros((l, MOTION_DIMS));
    for c in 0..MOTION_DIMS {
        let target_amp: f32 = if c < EXPR_DIMS { 0.7 } else { 0.4 };
        let n_comp = rng.gen_range(2..=4usize);
        let mut freqs = Vec::with_capacity(n_comp);
        let mut amps = Vec::with_capacity(n_comp);
        let mut phases = Vec::with_capacity(n_comp);
        for i in 0..n_comp {
            let f = if i == 0 {
                rng.gen_range(2.5..5.0f32)
            } else {
                rng.gen_range(0.3..2.5f32)
            };
            freqs.push(f);
            amps.push(rng.gen_range(0.5..1.0f32));
            phases.push(rng.gen_range(0.0..std::f32::consts::TAU));
        }
        let norm = target_amp / amps.iter().map(|a| a * a).sum::<f32>().sqrt();
        for a in &mut amps {
            *a *= norm;
        }
        for t in 0..l {
            let time = t as f32 / fps;
            let mut v = 0.0f32;
            for i in 0..n_comp {
                v += amps[i] * (std::f32::consts::TAU * freqs[i] * time + phases[i]).sin();
            }
            out[(t, c)] = v;
        }
    }
    let mut white = Array2::zeros((l, MOTION_DIMS));
    white.mapv_inplace(|_: f32| noise.sample(rng) as f32 * 0.05);
    out + box_smooth_columns(&white, SMOOTH_WINDOW)
}

/// Clamped piecewise-linear random walk sampled at 5 Hz: keypoints every
/// 5 tags (1 s) with linear interpolation between them.
fn va_walk(rng: &mut ChaCha20Rng, m: usize) -> Vec<f32> {
    let step = 5usize;
    let n_keys = m / step + 2;
    let mut keys = Vec::with_capacity(n_keys);
    let mut v = rng.gen_range(-0.6..0.6f32);
    keys.push(v);
    for _ in 1..n_keys {
        v = (v + rng.gen_range(-0.5..0.5f32)).clamp(-1.0, 1.0);
        keys.push(v);
    }
    (0..m)
        .map(|i| {
            let seg = i / step;
            let frac = (i % step) as f32 / step as f32;
            (keys[seg] * (1.0 - frac) + keys[seg + 1] * frac).clamp(-1.0, 1.0)
        })
        .collect()
}

fn pose_velocity(speaker: &Array2<f32>) -> Vec<f32> {
    let l = speaker.nrows();
    let mut v = vec![0.0f32; l];
    for t in 1..l {
        let mut acc = 0.0f32;
        for c in EXPR_DIMS..MOTION_DIMS {
            let d = speaker[(t, c)] - speaker[(t - 1, c)];
            acc += d * d;
        }
        v[t] = acc.sqrt();
    }
    if l > 1 {
        v[0] = v[1];
    }
    v
}

/// Fixed monotone map from pose velocity to mel energy.
pub fn mel_envelope(pose_vel: f32) -> f32 {
    (1.0 + 8.0 * pose_vel).ln()
}

fn mel_grid(rng: &mut ChaCha20Rng, speaker: &Array2<f32>) -> Array2<f32> {
    let l = speaker.nrows();
    let env: Vec<f32> = pose_velocity(speaker).iter().map(|&v| mel_envelope(v)).collect();

    // fixed bin profile shared by every sample
    let profile: Vec<f32> = (0..N_MELS)
        .map(|b| {
            let x = (b as f32 - 36.0) / 30.0;
            0.35 + 0.65 * (-x * x).exp()
        })
        .collect();

    // per-sample band pattern: two smooth bumps
    let mut band = vec![0.0f32; N_MELS];
    for _ in 0..2 {
        let center = rng.gen_range(0.0..N_MELS as f32);
        let width = rng.gen_range(4.0..20.0f32);
        let height = rng.gen_range(0.1..0.5f32);
        for (b, v) in band.iter_mut().enumerate() {
            let x = (b as f32 - center) / width;
            *v += height * (-0.5 * x * x).exp();
        }
    }

    let noise = Normal::new(0.0, 0.02).unwrap();
    Array2::from_shape_fn((N_MELS, 2 * l), |(b, ca)| {
        let t = ca / 2;
        env[t] * profile[b] + band[b] + noise.sample(rng) as f32
    })
}

const V_WORDS: [&str; 3] = ["negative", "neutral", "positive"];
const A_WORDS: [&str; 3] = ["calm", "lively", "excited"];

/// Fixed template vocabulary indexed by quantized (valence level, arousal
/// level, arousal trend): id = v_level * 9 + a_level * 3 + trend.
pub fn template_text(template_id: i32) -> String {
    let v_level = (template_id / 9) as usize % 3;
    let a_level = (template_id / 3) as usize % 3;
    let trend = template_id % 3;
    match trend {
        0 => format!(
            "the listener settles from {} to subdued while looking {}",
            A_WORDS[a_level], V_WORDS[v_level]
        ),
        1 => format!(
            "the listener stays {} with a {} expression",
            A_WORDS[a_level], V_WORDS[v_level]
        ),
        _ => format!(
            "the listener shifts from subdued to {} while looking {}",
            A_WORDS[a_level], V_WORDS[v_level]
        ),
    }
}

/// Number of entries in the template vocabulary.
pub const N_TEMPLATES: i32 = 27;

fn quantize_level(x: f32) -> usize {
    if x < -0.2 {
        0
    } else if x > 0.2 {
        2
    } else {
        1
    }
}

fn pick_template(va: &Array2<f32>) -> i32 {
    let m = va.nrows();
    let mean_v = va.column(0).sum() / m as f32;
    let mean_a = va.column(1).sum() / m as f32;
    let q = (m / 4).max(1);
    let head: f32 = (0..q).map(|i| va[(i, 1)]).sum::<f32>() / q as f32;
    let tail: f32 = (m - q..m).map(|i| va[(i, 1)]).sum::<f32>() / q as f32;
    let delta = tail - head;
    let trend = if delta < -0.25 {
        0
    } else if delta > 0.25 {
        2
    } else {
        1
    };
    (quantize_level(mean_v) * 9 + quantize_level(mean_a) * 3 + trend) as i32
}

/// Builds one sample deterministically from (seed, index, frame count).
pub fn synthesize_sample(
    seed: u64,
    index: u64,
    l: usize,
    tag_override: Option<TagOverride>,
) -> Result<DyadSample> {
    if !l.is_multiple_of(FRAMES_PER_TAG) || l < 2 * FRAMES_PER_TAG {
        return Err(Error::Domain(format!(
            "frame count {l} must be a multiple of {FRAMES_PER_TAG} and at least {}",
            2 * FRAMES_PER_TAG
        )));
    }
    let mut rng = sample_rng(seed, index);
    let m = l / FRAMES_PER_TAG;

    let speaker = speaker_motion(&mut rng, l);
    let mel = mel_grid(&mut rng, &speaker);

    let mut va = Array2::zeros((m, 2));
    let v_walk = va_walk(&mut rng, m);
    let a_walk = va_walk(&mut rng, m);
    for i in 0..m {
        va[(i, 0)] = v_walk[i];
        va[(i, 1)] = a_walk[i];
    }
    if let Some(ov) = tag_override {
        if let Some(v) = ov.valence {
            va.column_mut(0).fill(v.clamp(-1.0, 1.0));
        }
        if let Some(a) = ov.arousal {
            va.column_mut(1).fill(a.clamp(-1.0, 1.0));
        }
    }

    // listener = baseline(V) + gain(A) * delayed smoothed speaker + noise
    let smoothed = box_smooth_columns(&speaker, SMOOTH_WINDOW);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut listener = Array2::zeros((l, MOTION_DIMS));
    for t in 0..l {
        let tag = t / FRAMES_PER_TAG;
        let v = va[(tag, 0)];
        let a = va[(tag, 1)];
        let gain = arousal_gain(a);
        let src = t.saturating_sub(REACTION_DELAY);
        for c in 0..MOTION_DIMS {
            let base = if c < EXPR_DIMS { VALENCE_OFFSET * v } else { 0.0 };
            listener[(t, c)] = base + gain * smoothed[(src, c)] + noise.sample(&mut rng) as f32;
        }
    }

    let template_id = pick_template(&va);
    let sample = DyadSample {
        sample_id: format!("sample_{index:05}"),
        speaker_motion: MotionSequence::new(speaker)?,
        speaker_audio: MelFeatures::new(mel)?,
        listener_motion: MotionSequence::new(listener)?,
        text: TextAnnotation::new(template_text(template_id), Some(template_id))?,
        tags: IntensityTrack::new(va)?,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generates `n_samples` samples under `out_dir`, writes `manifest.json`
/// and returns the manifest. Normalization stats are computed from the
/// train split only (speaker and listener motion pooled).
pub fn generate_synthetic_dataset(
    out_dir: &Path,
    n_samples: usize,
    l: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<DatasetManifest> {
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Domain(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    std::fs::create_dir_all(out_dir.join("samples"))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // stats need a non-empty train split
    let n_train = (((n_samples as f64) * train_fraction).round() as usize).clamp(1, n_samples);

    let mut entries = Vec::with_capacity(n_samples);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    let mut train_motions: Vec<MotionSequence> = Vec::new();
    for index in 0..n_samples {
        let sample = synthesize_sample(seed, index as u64, l, None)?;
        let rel_path = format!("samples/{}.vldx", sample.sample_id);
        save_sample(&out_dir.join(&rel_path), &sample)?;
        if index < n_train {
            train_ids.push(sample.sample_id.clone());
            train_motions.push(sample.speaker_motion.clone());
            train_motions.push(sample.listener_motion.clone());
        } else {
            test_ids.push(sample.sample_id.clone());
        }
        entries.push(ManifestEntry {
            sample_id: sample.sample_id.clone(),
            path: rel_path,
        });
    }

    let normalization_stats: NormalizationStats = crate::data::normalize::compute_stats(
        train_motions.iter(),
    )?;
    let manifest = DatasetManifest {
        samples: entries,
        split: SplitAssignment {
            train: train_ids,
            test: test_ids,
        },
        normalization_stats,
    };
    save_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize::hold_upsample_tags;
    use tempfile::tempdir;

    #[test]
    fn regeneration_is_byte_identical() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        generate_synthetic_dataset(dir_a.path(), 2, 240, 7, 0.5).unwrap();
        generate_synthetic_dataset(dir_b.path(), 2, 240, 7, 0.5).unwrap();
        for name in ["samples/sample_00000.vldx", "samples/sample_00001.vldx"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across runs");
        }
    }

    #[test]
    fn constant_arousal_orders_listener_variance() {
        let lo = synthesize_sample(
            11,
            0,
            240,
            Some(TagOverride {
                valence: None,
                arousal: Some(-1.0),
            }),
        )
        .unwrap();
        let hi = synthesize_sample(
            11,
            0,
            240,
            Some(TagOverride {
                valence: None,
                arousal: Some(1.0),
            }),
        )
        .unwrap();
        let var = |s: &DyadSample| {
            let f = &s.listener_motion.frames;
            let l = f.nrows() as f32;
            f.columns()
                .into_iter()
                .map(|col| {
                    let mean = col.sum() / l;
                    col.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / l
                })
                .sum::<f32>()
                / f.ncols() as f32
        };
        assert!(var(&hi) > var(&lo), "hi {} vs lo {}", var(&hi), var(&lo));
    }

    #[test]
    fn arousal_variance_ordering_over_100_pairs() {
        let mut mean_lo = 0.0f64;
        let mut mean_hi = 0.0f64;
        for i in 0..100u64 {
            for (a, acc) in [(-0.4f32, &mut mean_lo), (0.4f32, &mut mean_hi)] {
                let s = synthesize_sample(
                    5,
                    i,
                    60,
                    Some(TagOverride {
                        valence: None,
                        arousal: Some(a),
                    }),
                )
                .unwrap();
                let f = &s.listener_motion.frames;
                let l = f.nrows() as f64;
                let var: f64 = f
                    .columns()
                    .into_iter()
                    .map(|col| {
                        let mean: f64 = col.iter().map(|&v| v as f64).sum::<f64>() / l;
                        col.iter()
                            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
                            .sum::<f64>()
                            / l
                    })
                    .sum::<f64>()
                    / f.ncols() as f64;
                *acc += var / 100.0;
            }
        }
        assert!(mean_hi > mean_lo, "hi {mean_hi} vs lo {mean_lo}");
    }

    #[test]
    fn tag_shape_is_40_by_2_for_240_frames() {
        let s = synthesize_sample(3, 1, 240, None).unwrap();
        assert_eq!(s.tags.va.dim(), (40, 2));
    }

    #[test]
    fn shape_relations_and_ranges_hold() {
        for l in [60usize, 240] {
            let s = synthesize_sample(9, 2, l, None).unwrap();
            assert_eq!(s.speaker_audio.audio_frames(), 2 * l);
            assert_eq!(s.tags.n_tags() * 6, l);
            assert!(s.tags.va.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(s.speaker_motion.frames.iter().all(|v| v.is_finite()));
            assert!(s.speaker_audio.grid.iter().all(|v| v.is_finite()));
            // upsampled track length matches frames
            assert_eq!(hold_upsample_tags(&s.tags, l).unwrap().nrows(), l);
        }
    }

    #[test]
    fn valence_sign_matches_expression_baseline() {
        // strongly positive vs strongly negative valence with muted reaction
        let pos = synthesize_sample(
            21,
            4,
            60,
            Some(TagOverride {
                valence: Some(0.9),
                arousal: Some(-1.0),
            }),
        )
        .unwrap();
        let neg = synthesize_sample(
            21,
            4,
            60,
            Some(TagOverride {
                valence: Some(-0.9),
                arousal: Some(-1.0),
            }),
        )
        .unwrap();
        let expr_mean = |s: &DyadSample| s.listener_motion.expression().mean().unwrap();
        assert!(expr_mean(&pos) > 0.0);
        assert!(expr_mean(&neg) < 0.0);
    }

    #[test]
    fn invalid_frame_count_rejected_with_message() {
        let err = synthesize_sample(1, 0, 59, None).unwrap_err();
        assert!(err.to_string().contains("multiple of 6"));
    }

    #[test]
    fn template_ids_cover_fixed_vocabulary() {
        let s = synthesize_sample(1, 3, 60, None).unwrap();
        let id = s.text.template_id.unwrap();
        assert!((0..N_TEMPLATES).contains(&id));
        assert_eq!(s.text.description, template_text(id));
    }

    #[test]
    fn mel_envelope_is_monotone() {
        let mut prev = mel_envelope(0.0);
        for i in 1..50 {
            let cur = mel_envelope(i as f32 * 0.05);
            assert!(cur > prev);
            prev = cur;
        }
    }
}
