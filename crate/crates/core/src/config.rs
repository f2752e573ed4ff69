//! Run configuration: built-in profiles, TOML config files with sections
//! [data], [model], [diffusion], [train], and the VLDN_SEED environment
//! override. Unknown keys are rejected before any compute starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FRAMES_PER_TAG;
use crate::diffusion::{LossWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::predictor::{PredictorConfig, PredictorTrainConfig};

pub const SEED_ENV_VAR: &str = "VLDN_SEED";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataSection {
    pub n_samples: usize,
    pub frames: usize,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_text: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiffusionSection {
    pub t_steps: usize,
    pub ddim_steps: usize,
    pub cosine_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub checkpoint_every: usize,
    pub lambda_simple: f64,
    pub lambda_emotional: f64,
    pub lambda_vel: f64,
    pub predictor_epochs: usize,
    pub predictor_batch_size: usize,
    pub predictor_lr: f64,
    pub predictor_hidden: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub diffusion: DiffusionSection,
    pub train: TrainSection,
}

impl RunConfig {
    /// CI-runnable defaults.
    pub fn desk() -> Self {
        RunConfig {
            profile: "desk".into(),
            seed: 7,
            data: DataSection {
                n_samples: 512,
                frames: 60,
                train_fraction: 0.8,
            },
            model: ModelSection {
                d_model: 64,
                n_blocks: 4,
                n_heads: 4,
                d_text: 32,
            },
            diffusion: DiffusionSection {
                t_steps: 100,
                ddim_steps: 25,
                cosine_s: 0.008,
            },
            train: TrainSection {
                epochs: 50,
                batch_size: 16,
                lr: 1e-4,
                weight_decay: 1e-4,
                checkpoint_every: 10,
                lambda_simple: 2.0,
                lambda_emotional: 0.2,
                lambda_vel: 0.8,
                predictor_epochs: 40,
                predictor_batch_size: 32,
                predictor_lr: 1e-3,
                predictor_hidden: 32,
            },
        }
    }

    /// Published training constants: 8 s clips at 30 fps, 1000 diffusion
    /// steps, 100 DDIM steps, batch 64, lr 1e-5, 800 epochs.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.profile = "paper".into();
        cfg.data.frames = 240;
        cfg.diffusion.t_steps = 1000;
        cfg.diffusion.ddim_steps = 100;
        cfg.train.epochs = 800;
        cfg.train.batch_size = 64;
        cfg.train.lr = 1e-5;
        cfg
    }

    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(format!(
                "unknown profile `{other}` (expected \"desk\" or \"paper\")"
            ))),
        }
    }

    /// Overlays a TOML config file; unknown keys anywhere are rejected.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let pstr = path.display().to_string();
        if !path.exists() {
            return Err(Error::MissingFile(pstr));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&pstr, e))?;
        let partial: PartialConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{pstr}: {e}")))?;
        partial.apply(self);
        Ok(())
    }

    /// Applies the VLDN_SEED environment override when present.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
            let seed: u64 = raw.parse().map_err(|_| {
                Error::config(format!("{SEED_ENV_VAR}={raw} is not a valid u64 seed"))
            })?;
            self.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_samples == 0 {
            return Err(Error::config("data.n_samples must be at least 1"));
        }
        if !self.data.frames.is_multiple_of(FRAMES_PER_TAG) || self.data.frames < 2 * FRAMES_PER_TAG {
            return Err(Error::config(format!(
                "data.frames = {} must be a multiple of {FRAMES_PER_TAG} (tags at 5 Hz) and >= {}",
                self.data.frames,
                2 * FRAMES_PER_TAG
            )));
        }
        if !(0.0..=1.0).contains(&self.data.train_fraction) {
            return Err(Error::config("data.train_fraction must lie in [0, 1]"));
        }
        if self.model.n_heads == 0 || !self.model.d_model.is_multiple_of(self.model.n_heads) {
            return Err(Error::config(format!(
                "model.d_model = {} must be divisible by model.n_heads = {}",
                self.model.d_model, self.model.n_heads
            )));
        }
        if self.model.n_blocks == 0 || self.model.d_text == 0 {
            return Err(Error::config("model.n_blocks and model.d_text must be positive"));
        }
        if self.diffusion.t_steps == 0 {
            return Err(Error::config("diffusion.t_steps must be at least 1"));
        }
        if self.diffusion.ddim_steps == 0 || self.diffusion.ddim_steps > self.diffusion.t_steps {
            return Err(Error::config(format!(
                "diffusion.ddim_steps = {} must lie in 1..=t_steps ({})",
                self.diffusion.ddim_steps, self.diffusion.t_steps
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::config("train.epochs and train.batch_size must be positive"));
        }
        if self.train.lr < 0.0 || self.train.weight_decay < 0.0 {
            return Err(Error::config("train.lr and train.weight_decay must be non-negative"));
        }
        for (name, v) in [
            ("lambda_simple", self.train.lambda_simple),
            ("lambda_emotional", self.train.lambda_emotional),
            ("lambda_vel", self.train.lambda_vel),
        ] {
            if v < 0.0 {
                return Err(Error::config(format!("train.{name} must be non-negative")));
            }
        }
        if self.train.checkpoint_every == 0 {
            return Err(Error::config("train.checkpoint_every must be positive"));
        }
        if self.train.predictor_epochs == 0 || self.train.predictor_hidden == 0 {
            return Err(Error::config("predictor training sizes must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.model.d_model,
            n_blocks: self.model.n_blocks,
            n_heads: self.model.n_heads,
            d_text: self.model.d_text,
            frames: self.data.frames,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            seed: self.seed,
            checkpoint_every: self.train.checkpoint_every,
            weights: LossWeights {
                simple: self.train.lambda_simple,
                emotional: self.train.lambda_emotional,
                vel: self.train.lambda_vel,
            },
        }
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            window: FRAMES_PER_TAG,
            hidden: self.train.predictor_hidden,
            layers: 2,
        }
    }

    pub fn predictor_train_config(&self) -> PredictorTrainConfig {
        PredictorTrainConfig {
            epochs: self.train.predictor_epochs,
            batch_size: self.train.predictor_batch_size,
            lr: self.train.predictor_lr,
            seed: self.seed,
        }
    }
}

// Optional-field mirror used for file parsing so partial files are fine but
// unknown keys are not.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    profile: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    data: PartialData,
    #[serde(default)]
    model: PartialModel,
    #[serde(default)]
    diffusion: PartialDiffusion,
    #[serde(default)]
    train: PartialTrain,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialData {
    n_samples: Option<usize>,
    frames: Option<usize>,
    train_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialModel {
    d_model: Option<usize>,
    n_blocks: Option<usize>,
    n_heads: Option<usize>,
    d_text: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialDiffusion {
    t_steps: Option<usize>,
    ddim_steps: Option<usize>,
    cosine_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialTrain {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    checkpoint_every: Option<usize>,
    lambda_simple: Option<f64>,
    lambda_emotional: Option<f64>,
    lambda_vel: Option<f64>,
    predictor_epochs: Option<usize>,
    predictor_batch_size: Option<usize>,
    predictor_lr: Option<f64>,
    predictor_hidden: Option<usize>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })*
    };
}

impl PartialConfig {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(p) = self.profile {
            cfg.profile = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        overlay!(cfg.data, self.data, [n_samples, frames, train_fraction]);
        overlay!(cfg.model, self.model, [d_model, n_blocks, n_heads, d_text]);
        overlay!(cfg.diffusion, self.diffusion, [t_steps, ddim_steps, cosine_s]);
        overlay!(
            cfg.train,
            self.train,
            [
                epochs,
                batch_size,
                lr,
                weight_decay,
                checkpoint_every,
                lambda_simple,
                lambda_emotional,
                lambda_vel,
                predictor_epochs,
                predictor_batch_size,
                predictor_lr,
                predictor_hidden,
            ]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_carry_published_constants() {
        let paper = RunConfig::paper();
        assert_eq!(paper.diffusion.t_steps, 1000);
        assert_eq!(paper.diffusion.ddim_steps, 100);
        assert_eq!(paper.train.batch_size, 64);
        assert!((paper.train.lr - 1e-5).abs() < 1e-12);
        assert_eq!(paper.data.frames, 240);
        assert!((paper.train.lambda_simple - 2.0).abs() < 1e-12);
        assert!((paper.train.lambda_emotional - 0.2).abs() < 1e-12);
        assert!((paper.train.lambda_vel - 0.8).abs() < 1e-12);
        paper.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn file_overlay_and_unknown_key_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.toml");
        std::fs::write(
            &good,
            "seed = 99\n[train]\nepochs = 3\nlr = 0.01\n[diffusion]\nt_steps = 20\nddim_steps = 5\n",
        )
        .unwrap();
        let mut cfg = RunConfig::desk();
        cfg.merge_file(&good).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.diffusion.t_steps, 20);
        // untouched keys keep profile defaults
        assert_eq!(cfg.train.batch_size, 16);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[train]\nlearning_rate = 0.01\n").unwrap();
        let mut cfg = RunConfig::desk();
        let err = cfg.merge_file(&bad).unwrap_err();
        assert!(err.to_string().contains("learning_rate") || err.to_string().contains("unknown"));
    }

    #[test]
    fn env_seed_override() {
        let mut cfg = RunConfig::desk();
        std::env::set_var(SEED_ENV_VAR, "1234");
        cfg.apply_env().unwrap();
        assert_eq!(cfg.seed, 1234);
        std::env::set_var(SEED_ENV_VAR, "not-a-number");
        assert!(cfg.apply_env().is_err());
        std::env::remove_var(SEED_ENV_VAR);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.data.frames = 59;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.model.d_model = 30;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::desk();
        cfg.diffusion.ddim_steps = 500;
        assert!(cfg.validate().is_err());
    }
}
