//! Frozen emotional intensity predictor: listener motion -> VA tags at 5 Hz.
//!
//! Windowed architecture aligned to the 6-frame tag period: each
//! non-overlapping window runs a kernel-3 temporal convolution, GELU, mean
//! pooling over the window, then a 2-layer MLP squashed to (-1, 1) by tanh.
//! The emotional loss backpropagates through this network into the
//! generator, so input gradients are first-class here.

use std::path::Path;

use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FRAMES_PER_TAG, MOTION_DIMS};
use crate::error::{Error, Result};
use crate::nn::activation::{gelu, gelu_backward, tanh, tanh_backward_from_output};
use crate::nn::adamw::{AdamW, AdamWConfig};
use crate::nn::checkpoint::{load_into_store, save_checkpoint, CheckpointHeader};
use crate::nn::conv::Conv1d;
use crate::nn::linear::Linear;
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PredictorConfig {
    /// Frames per tag window.
    pub window: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            window: FRAMES_PER_TAG,
            hidden: 32,
            layers: 2,
        }
    }
}

pub struct PredictorCache<F> {
    pub motion: Mat<F>,
    pub conv_out: Vec<Mat<F>>,
    pub act: Vec<Mat<F>>,
    pub pooled: Mat<F>,
    pub h_pre: Mat<F>,
    pub h_act: Mat<F>,
    pub out_pre: Mat<F>,
    pub out: Mat<F>,
}

pub struct IntensityPredictor<F> {
    pub cfg: PredictorConfig,
    pub store: ParamStore<F>,
    pub conv: Conv1d,
    pub fc1: Linear,
    pub fc2: Linear,
    frozen: bool,
}

impl<F: Real> IntensityPredictor<F> {
    pub fn new(cfg: PredictorConfig, seed: u64) -> Result<Self> {
        if cfg.window == 0 || cfg.hidden == 0 {
            return Err(Error::config("window and hidden width must be positive"));
        }
        if cfg.layers != 2 {
            return Err(Error::config("predictor supports exactly 2 MLP layers"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv1d::new(&mut store, "pred.conv", MOTION_DIMS, cfg.hidden, &mut rng);
        let fc1 = Linear::new(&mut store, "pred.fc1", cfg.hidden, cfg.hidden, &mut rng);
        let fc2 = Linear::new(&mut store, "pred.fc2", cfg.hidden, 2, &mut rng);
        Ok(IntensityPredictor {
            cfg,
            store,
            conv,
            fc1,
            fc2,
            frozen: false,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the predictor frozen: parameter training is refused from here on.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// VA prediction for normalized motion, [M, 2] in (-1, 1).
    pub fn forward(&self, motion: &Mat<F>) -> Result<(Mat<F>, PredictorCache<F>)> {
        let l = motion.nrows();
        if motion.ncols() != MOTION_DIMS {
            return Err(Error::shape(format!(
                "motion has {} channels, expected {MOTION_DIMS}",
                motion.ncols()
            )));
        }
        if !l.is_multiple_of(self.cfg.window) {
            return Err(Error::shape(format!(
                "frame count {l} not divisible by window {}",
                self.cfg.window
            )));
        }
        let m = l / self.cfg.window;
        let inv_w = F::from_usize(self.cfg.window).recip();

        let mut conv_out = Vec::with_capacity(m);
        let mut act = Vec::with_capacity(m);
        let mut pooled = Mat::zeros((m, self.cfg.hidden));
        for w in 0..m {
            let window = motion
                .slice(s![w * self.cfg.window..(w + 1) * self.cfg.window, ..])
                .to_owned();
            let c = self.conv.forward(&self.store, &window);
            let a = gelu(&c);
            for j in 0..self.cfg.hidden {
                let mut acc = F::zero();
                for t in 0..self.cfg.window {
                    acc += a[(t, j)];
                }
                pooled[(w, j)] = acc * inv_w;
            }
            conv_out.push(c);
            act.push(a);
        }
        let h_pre = self.fc1.forward(&self.store, &pooled);
        let h_act = gelu(&h_pre);
        let out_pre = self.fc2.forward(&self.store, &h_act);
        let out = tanh(&out_pre);
        Ok((
            out.clone(),
            PredictorCache {
                motion: motion.clone(),
                conv_out,
                act,
                pooled,
                h_pre,
                h_act,
                out_pre,
                out,
            },
        ))
    }

    /// Gradient of a loss on the VA output with respect to the motion input.
    /// Parameter gradients are accumulated into `g` when provided (refused
    /// while frozen).
    pub fn backward(
        &self,
        cache: &PredictorCache<F>,
        d_out: &Mat<F>,
        g: Option<&mut Grads<F>>,
    ) -> Result<Mat<F>> {
        if self.frozen && g.is_some() {
            return Err(Error::config(
                "predictor is frozen; parameter gradients are refused",
            ));
        }
        let mut scratch = Grads::zeros_like(&self.store);
        let g_ref: &mut Grads<F> = match g {
            Some(grads) => grads,
            None => &mut scratch,
        };

        let d_out_pre = tanh_backward_from_output(&cache.out, d_out);
        let dh_act = self.fc2.backward(&self.store, &cache.h_act, &d_out_pre, g_ref);
        let dh_pre = gelu_backward(&cache.h_pre, &dh_act);
        let d_pooled = self.fc1.backward(&self.store, &cache.pooled, &dh_pre, g_ref);

        let m = cache.conv_out.len();
        let inv_w = F::from_usize(self.cfg.window).recip();
        let mut d_motion = Mat::zeros(cache.motion.dim());
        for w in 0..m {
            let mut d_act = Mat::zeros((self.cfg.window, self.cfg.hidden));
            for j in 0..self.cfg.hidden {
                let spread = d_pooled[(w, j)] * inv_w;
                for t in 0..self.cfg.window {
                    d_act[(t, j)] = spread;
                }
            }
            let d_conv = gelu_backward(&cache.conv_out[w], &d_act);
            let window = cache
                .motion
                .slice(s![w * self.cfg.window..(w + 1) * self.cfg.window, ..])
                .to_owned();
            let d_window = self.conv.backward(&self.store, &window, &d_conv, g_ref);
            d_motion
                .slice_mut(s![w * self.cfg.window..(w + 1) * self.cfg.window, ..])
                .assign(&d_window);
        }
        Ok(d_motion)
    }

    pub fn save(&self, path: &Path, epoch: u64) -> Result<()> {
        let header = CheckpointHeader {
            kind: "predictor".into(),
            config: serde_json::to_value(self.cfg)?,
            frozen: self.frozen,
            epoch,
        };
        save_checkpoint(path, &header, &self.store)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, _) = crate::nn::checkpoint::read_checkpoint(path)?;
        let cfg: PredictorConfig = serde_json::from_value(header.config.clone())?;
        let mut predictor = IntensityPredictor::new(cfg, 0)?;
        let header = load_into_store(path, "predictor", &mut predictor.store)?;
        predictor.frozen = header.frozen;
        Ok((predictor, header))
    }

    /// Loads a checkpoint for use inside the diffusion loss; the checkpoint
    /// must carry the frozen flag.
    pub fn load_frozen(path: &Path) -> Result<Self> {
        let (predictor, header) = Self::load(path)?;
        if !header.frozen {
            return Err(Error::config(format!(
                "checkpoint {} is not marked frozen; train and freeze the predictor first",
                path.display()
            )));
        }
        Ok(predictor)
    }
}

/// MSE over paired VA matrices.
pub fn va_mse<F: Real>(pred: &Mat<F>, target: &Mat<F>) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            seed: 7,
        }
    }
}

pub struct PredictorTrainOutcome {
    pub predictor: IntensityPredictor<f32>,
    pub holdout_mse: f64,
    pub epoch_losses: Vec<f64>,
}

/// Supervised training on (normalized listener motion, VA) pairs; returns
/// the frozen predictor and the held-out MSE.
pub fn train_predictor(
    train: &[(Mat<f32>, Mat<f32>)],
    holdout: &[(Mat<f32>, Mat<f32>)],
    cfg: PredictorConfig,
    opts: &PredictorTrainConfig,
) -> Result<PredictorTrainOutcome> {
    if train.is_empty() {
        return Err(Error::Domain("predictor training needs samples".into()));
    }
    let mut predictor = IntensityPredictor::<f32>::new(cfg, opts.seed)?;
    let mut opt = AdamW::new(
        &predictor.store,
        AdamWConfig {
            lr: opts.lr,
            weight_decay: 1e-5,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for _epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_total = 0.0f64;
        for chunk in order.chunks(opts.batch_size) {
            let mut grads = Grads::zeros_like(&predictor.store);
            let mut total = 0.0f64;
            for &idx in chunk {
                let (motion, va) = &train[idx];
                let (pred, cache) = predictor.forward(motion)?;
                total += va_mse(&pred, va);
                let n = pred.len() as f32;
                let d_out = (&pred - va).mapv(|v| 2.0 * v / n);
                predictor.backward(&cache, &d_out, Some(&mut grads))?;
            }
            if !total.is_finite() {
                return Err(Error::Numeric(
                    "predictor training diverged (non-finite loss)".into(),
                ));
            }
            grads.scale(1.0 / chunk.len() as f32);
            opt.step(&mut predictor.store, &grads);
            epoch_total += total;
        }
        epoch_losses.push(epoch_total / train.len() as f64);
    }

    let mut holdout_mse = 0.0f64;
    if !holdout.is_empty() {
        for (motion, va) in holdout {
            let (pred, _) = predictor.forward(motion)?;
            holdout_mse += va_mse(&pred, va);
        }
        holdout_mse /= holdout.len() as f64;
    }
    predictor.freeze();
    Ok(PredictorTrainOutcome {
        predictor,
        holdout_mse,
        epoch_losses,
    })
}
