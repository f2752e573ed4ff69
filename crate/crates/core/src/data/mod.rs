//! Domain types for dyadic samples, serialization, normalization and the
//! synthetic dataset generator.

pub mod io;
pub mod normalize;
pub mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per second of all motion sequences.
pub const FPS: usize = 30;
/// Expression channels per frame.
pub const EXPR_DIMS: usize = 50;
/// Pose channels per frame.
pub const POSE_DIMS: usize = 6;
/// Total motion channels per frame.
pub const MOTION_DIMS: usize = EXPR_DIMS + POSE_DIMS;
/// Mel bins in the audio feature grid.
pub const N_MELS: usize = 128;
/// FFT window size behind compatible mel grids. No DSP runs in this crate;
/// the constants document what precomputed features are expected to use.
pub const MEL_FFT_WINDOW: usize = 512;
/// Hop length behind compatible mel grids (yields 2 audio frames per
/// 30 fps motion frame).
pub const MEL_HOP_LENGTH: usize = 160;
/// Audio frames per motion frame.
pub const AUDIO_FRAMES_PER_MOTION_FRAME: usize = 2;
/// Motion frames per intensity tag (30 fps vs 5 Hz).
pub const FRAMES_PER_TAG: usize = 6;

/// Head motion over `L` frames: 50 expression channels (columns 0..50)
/// followed by 6 pose channels (columns 50..56).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Array2<f32>,
}

impl MotionSequence {
    pub fn new(frames: Array2<f32>) -> Result<Self> {
        if frames.nrows() < 2 {
            return Err(Error::shape(format!(
                "motion sequence needs at least 2 frames, got {}",
                frames.nrows()
            )));
        }
        if frames.ncols() != MOTION_DIMS {
            return Err(Error::shape(format!(
                "motion sequence needs {MOTION_DIMS} channels, got {}",
                frames.ncols()
            )));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("motion sequence contains non-finite values".into()));
        }
        Ok(MotionSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    /// Expression block view (columns 0..50).
    pub fn expression(&self) -> ndarray::ArrayView2<'_, f32> {
        self.frames.slice(ndarray::s![.., ..EXPR_DIMS])
    }

    /// Pose block view (columns 50..56).
    pub fn pose(&self) -> ndarray::ArrayView2<'_, f32> {
        self.frames.slice(ndarray::s![.., EXPR_DIMS..])
    }
}

/// Mel-spectrogram grid, `n_mels` rows by `T_a` audio frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFeatures {
    pub grid: Array2<f32>,
}

impl MelFeatures {
    pub fn new(grid: Array2<f32>) -> Result<Self> {
        if grid.nrows() != N_MELS {
            return Err(Error::shape(format!(
                "mel grid needs {N_MELS} bins, got {}",
                grid.nrows()
            )));
        }
        if !grid.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("mel grid contains non-finite values".into()));
        }
        Ok(MelFeatures { grid })
    }

    pub fn audio_frames(&self) -> usize {
        self.grid.ncols()
    }
}

/// Valence/arousal tags at 5 Hz; column 0 valence, column 1 arousal,
/// every entry in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrack {
    pub va: Array2<f32>,
}

impl IntensityTrack {
    pub fn new(va: Array2<f32>) -> Result<Self> {
        if va.ncols() != 2 {
            return Err(Error::shape(format!(
                "intensity track needs 2 columns, got {}",
                va.ncols()
            )));
        }
        if !va.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)) {
            return Err(Error::Domain(
                "intensity values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(IntensityTrack { va })
    }

    /// Constant (valence, arousal) track with `m` tags.
    pub fn constant(valence: f32, arousal: f32, m: usize) -> Result<Self> {
        let mut va = Array2::zeros((m, 2));
        va.column_mut(0).fill(valence);
        va.column_mut(1).fill(arousal);
        IntensityTrack::new(va)
    }

    pub fn n_tags(&self) -> usize {
        self.va.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAnnotation {
    pub description: String,
    /// Index into the synthetic template vocabulary; None for external data.
    pub template_id: Option<i32>,
}

impl TextAnnotation {
    pub fn new(description: impl Into<String>, template_id: Option<i32>) -> Result<Self> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(Error::Domain("text description must be non-empty".into()));
        }
        Ok(TextAnnotation {
            description,
            template_id,
        })
    }
}

/// One dyadic clip: speaker motion + audio features, listener motion,
/// text description and listener intensity tags.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadSample {
    pub sample_id: String,
    pub speaker_motion: MotionSequence,
    pub speaker_audio: MelFeatures,
    pub listener_motion: MotionSequence,
    pub text: TextAnnotation,
    pub tags: IntensityTrack,
}

impl DyadSample {
    /// Validates the cross-field temporal contract L = T_a / 2 = 6 M.
    pub fn validate(&self) -> Result<()> {
        let l = self.speaker_motion.len();
        if self.listener_motion.len() != l {
            return Err(Error::shape(format!(
                "speaker has {l} frames but listener has {}",
                self.listener_motion.len()
            )));
        }
        if self.speaker_audio.audio_frames() != AUDIO_FRAMES_PER_MOTION_FRAME * l {
            return Err(Error::shape(format!(
                "audio frames {} != 2 x motion frames {l}",
                self.speaker_audio.audio_frames()
            )));
        }
        if self.tags.n_tags() * FRAMES_PER_TAG != l {
            return Err(Error::shape(format!(
                "tag count {} x {FRAMES_PER_TAG} != motion frames {l}",
                self.tags.n_tags()
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.speaker_motion.len()
    }
}

/// Per-channel first and second moments of the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Dataset index: file list, train/test split and normalization statistics
/// computed from the train split only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<ManifestEntry>,
    pub split: SplitAssignment,
    pub normalization_stats: NormalizationStats,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for id in &self.split.train {
            if self.split.test.contains(id) {
                return Err(Error::Domain(format!(
                    "sample `{id}` appears in both train and test splits"
                )));
            }
        }
        if self.normalization_stats.mean.len() != MOTION_DIMS
            || self.normalization_stats.std.len() != MOTION_DIMS
        {
            return Err(Error::shape(format!(
                "normalization stats must carry {MOTION_DIMS} channels"
            )));
        }
        if self.normalization_stats.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Domain(
                "normalization std entries must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn entry(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.samples.iter().find(|e| e.sample_id == sample_id)
    }
}
