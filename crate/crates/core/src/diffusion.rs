//! Noise schedule, forward noising, loss assembly, deterministic DDIM
//! sampling and the training loop.
//!
//! The forward process is variance-preserving with a cosine cumulative
//! schedule; the network predicts the clean sample, which makes the final
//! DDIM step (t' = 0, alpha_bar = 1) return the prediction exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::io::load_manifest_sample;
use crate::data::normalize::normalize_mat;
use crate::data::{DatasetManifest, NormalizationStats, MOTION_DIMS};
use crate::error::{Error, Result};
use crate::model::{CondInputs, ListenerModel, ModelCache};
use crate::nn::adamw::{AdamW, AdamWConfig};
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat};
use crate::predictor::IntensityPredictor;
use crate::text::TextEncoder;

/// Cumulative signal coefficients alpha_bar[0..=T] with alpha_bar[0] = 1,
/// strictly decreasing, and alpha_bar[T] in (0, 0.01).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub t_steps: usize,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_bar.len() != self.t_steps + 1 {
            return Err(Error::config("alpha_bar must have T+1 entries"));
        }
        if self.alpha_bar[0] != 1.0 {
            return Err(Error::config("alpha_bar[0] must be exactly 1"));
        }
        for t in 1..=self.t_steps {
            let (prev, cur) = (self.alpha_bar[t - 1], self.alpha_bar[t]);
            if !(cur > 0.0 && cur < prev && cur <= 1.0) {
                return Err(Error::config(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]; step {t}: {prev} -> {cur}"
                )));
            }
        }
        if !(self.alpha_bar[self.t_steps] > 0.0 && self.alpha_bar[self.t_steps] < 0.01) {
            return Err(Error::config(format!(
                "alpha_bar[T] = {} outside (0, 0.01)",
                self.alpha_bar[self.t_steps]
            )));
        }
        Ok(())
    }

    /// Noise scale gamma(t) = sqrt(1 - alpha_bar[t]).
    pub fn gamma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }
}

/// Cosine cumulative schedule: alpha_bar[t] = f(t)/f(0) with
/// f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), per-step ratios clipped into
/// [0.001, 1].
pub fn cosine_schedule(t_steps: usize, s: f64) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    let f = |t: f64| -> f64 {
        let x = ((t / t_steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0.0);
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    alpha_bar.push(1.0);
    let mut prev_raw = 1.0;
    for t in 1..=t_steps {
        let raw = f(t as f64) / f0;
        let ratio = (raw / prev_raw).clamp(0.001, 1.0);
        alpha_bar.push(alpha_bar[t - 1] * ratio);
        prev_raw = raw.max(1e-300);
    }
    let schedule = NoiseSchedule { t_steps, alpha_bar };
    schedule.validate()?;
    Ok(schedule)
}

/// Forward noising: H^(t) = sqrt(alpha_bar[t]) H + sqrt(1 - alpha_bar[t]) eps.
pub fn q_sample<F: Real>(
    h: &Mat<F>,
    t: usize,
    eps: &Mat<F>,
    schedule: &NoiseSchedule,
) -> Result<Mat<F>> {
    if t == 0 || t > schedule.t_steps {
        return Err(Error::Domain(format!(
            "q_sample timestep {t} outside 1..={}",
            schedule.t_steps
        )));
    }
    if h.dim() != eps.dim() {
        return Err(Error::shape(format!(
            "noise shape {:?} must match signal {:?}",
            eps.dim(),
            h.dim()
        )));
    }
    let signal = F::from_f64(schedule.alpha_bar[t].sqrt());
    let noise = F::from_f64(schedule.gamma(t));
    Ok(h.mapv(|v| v * signal) + &eps.mapv(|v| v * noise))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub simple: f64,
    pub emotional: f64,
    pub vel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            simple: 2.0,
            emotional: 0.2,
            vel: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub simple: f64,
    pub emotional: f64,
    pub vel: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted(simple: f64, emotional: f64, vel: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            simple,
            emotional,
            vel,
            total: w.simple * simple + w.emotional * emotional + w.vel * vel,
        }
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.simple += other.simple;
        self.emotional += other.emotional;
        self.vel += other.vel;
        self.total += other.total;
    }

    pub fn scale(&mut self, s: f64) {
        self.simple *= s;
        self.emotional *= s;
        self.vel *= s;
        self.total *= s;
    }
}

fn mse<F: Real>(a: &Mat<F>, b: &Mat<F>) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// First temporal differences, [L-1, d].
fn temporal_diff<F: Real>(x: &Mat<F>) -> Mat<F> {
    let l = x.nrows();
    let mut out = Mat::zeros((l - 1, x.ncols()));
    for t in 0..l - 1 {
        for c in 0..x.ncols() {
            out[(t, c)] = x[(t + 1, c)] - x[(t, c)];
        }
    }
    out
}

/// One training item: everything precomputed that does not depend on
/// learnable parameters.
pub struct TrainItem {
    pub sample_id: String,
    pub inputs: CondInputs<f32>,
    /// Normalized listener motion, [L, 56].
    pub listener: Mat<f32>,
    /// Ground-truth VA track, [M, 2].
    pub va: Mat<f32>,
}

pub struct LoadedDataset {
    pub items: Vec<TrainItem>,
    pub stats: NormalizationStats,
}

impl LoadedDataset {
    /// Loads the given split ("train" or "test") fully into memory.
    pub fn load(
        dataset_dir: &Path,
        manifest: &DatasetManifest,
        split_ids: &[String],
        encoder: &dyn TextEncoder<f32>,
    ) -> Result<Self> {
        let stats = manifest.normalization_stats.clone();
        let mut items = Vec::with_capacity(split_ids.len());
        for id in split_ids {
            let entry = manifest
                .entry(id)
                .ok_or_else(|| Error::MissingFile(format!("sample `{id}` not in manifest")))?;
            let sample = load_manifest_sample(dataset_dir, &entry.path)?;
            let inputs = CondInputs::from_sample(&sample, &stats, encoder)?;
            let listener = normalize_mat(&sample.listener_motion.frames, &stats)?;
            items.push(TrainItem {
                sample_id: id.clone(),
                inputs,
                listener,
                va: sample.tags.va.clone(),
            });
        }
        Ok(LoadedDataset { items, stats })
    }

    /// (normalized listener, VA) pairs for predictor training.
    pub fn predictor_pairs(&self) -> Vec<(Mat<f32>, Mat<f32>)> {
        self.items
            .iter()
            .map(|item| (item.listener.clone(), item.va.clone()))
            .collect()
    }
}

/// Loss values from a prediction and its targets: reconstruction against
/// the clean motion, emotional alignment of the predicted VA track, and
/// smoothness of first temporal differences.
pub fn assemble_losses(
    pred: &Mat<f32>,
    target: &Mat<f32>,
    va_pred: &Mat<f32>,
    va_target: &Mat<f32>,
    weights: &LossWeights,
) -> LossBreakdown {
    let simple = mse(pred, target);
    let emotional = mse(va_pred, va_target);
    let vel = mse(&temporal_diff(pred), &temporal_diff(target));
    LossBreakdown::weighted(simple, emotional, vel, weights)
}

/// Per-item loss and prediction gradient. The emotional term backpropagates
/// through the frozen predictor into the prediction.
fn item_losses_and_grad(
    model: &ListenerModel<f32>,
    predictor: &IntensityPredictor<f32>,
    item: &TrainItem,
    t: usize,
    eps: &Mat<f32>,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Mat<f32>, ModelCache<f32>)> {
    let h = &item.listener;
    let h_t = q_sample(h, t, eps, schedule)?;
    let (pred, cache) = model.forward_train(&item.inputs, &h_t, t, schedule.t_steps)?;
    let (va_pred, pred_cache) = predictor.forward(&pred)?;
    let losses = assemble_losses(&pred, h, &va_pred, &item.va, weights);

    let n_simple = pred.len() as f32;
    let mut d_pred = (&pred - h).mapv(|v| 2.0 * v / n_simple * weights.simple as f32);

    let n_emo = va_pred.len() as f32;
    let d_va = (&va_pred - &item.va).mapv(|v| 2.0 * v / n_emo * weights.emotional as f32);
    let d_pred_emo = predictor.backward(&pred_cache, &d_va, None)?;
    d_pred += &d_pred_emo;

    let dh_pred = temporal_diff(&pred);
    let dh_true = temporal_diff(h);
    let n_vel = dh_pred.len() as f32;
    let resid = (&dh_pred - &dh_true).mapv(|v| 2.0 * v / n_vel * weights.vel as f32);
    let l = pred.nrows();
    for c in 0..pred.ncols() {
        for tt in 0..l - 1 {
            let r = resid[(tt, c)];
            d_pred[(tt + 1, c)] += r;
            d_pred[(tt, c)] -= r;
        }
    }

    Ok((losses, d_pred, cache))
}

/// Loss evaluation over a batch without parameter updates; mirrors the
/// objective used by training.
pub fn compute_losses(
    model: &ListenerModel<f32>,
    predictor: &IntensityPredictor<f32>,
    items: &[&TrainItem],
    schedule: &NoiseSchedule,
    weights: &LossWeights,
    rng: &mut ChaCha20Rng,
) -> Result<LossBreakdown> {
    if !predictor.is_frozen() {
        return Err(Error::config(
            "intensity predictor must be frozen for loss evaluation",
        ));
    }
    let mut acc = LossBreakdown::default();
    for item in items {
        let t = rng.gen_range(1..=schedule.t_steps);
        let eps = randn_like(&item.listener, rng);
        let (losses, _, _) =
            item_losses_and_grad(model, predictor, item, t, &eps, schedule, weights)?;
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss on sample `{}` at t={t}",
                item.sample_id
            )));
        }
        acc.add(&losses);
    }
    acc.scale(1.0 / items.len().max(1) as f64);
    Ok(acc)
}

fn randn_like(reference: &Mat<f32>, rng: &mut ChaCha20Rng) -> Mat<f32> {
    Array2::from_shape_fn(reference.dim(), |_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) as f32
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-4,
            seed: 7,
            checkpoint_every: 10,
            weights: LossWeights::default(),
        }
    }
}

pub struct TrainOutcome {
    pub epoch_losses: Vec<LossBreakdown>,
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

fn append_csv(path: &Path, epoch: u64, losses: &LossBreakdown, write_header: bool) -> Result<()> {
    let pstr = path.display().to_string();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(&pstr, e))?;
    if write_header {
        writeln!(file, "epoch,simple,emotional,vel,total").map_err(|e| Error::io(&pstr, e))?;
    }
    writeln!(
        file,
        "{epoch},{:.8},{:.8},{:.8},{:.8}",
        losses.simple, losses.emotional, losses.vel, losses.total
    )
    .map_err(|e| Error::io(&pstr, e))?;
    Ok(())
}

/// Trains the diffusion model. Deterministic given the seed: sequential
/// batch reduction in shuffled-index order. On divergence the last written
/// checkpoint is retained and an error is returned.
pub fn train_diffusion(
    model: &mut ListenerModel<f32>,
    predictor: &IntensityPredictor<f32>,
    data: &LoadedDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    out_dir: &Path,
    start_epoch: u64,
) -> Result<TrainOutcome> {
    if data.items.is_empty() {
        return Err(Error::Domain("training needs a non-empty train split".into()));
    }
    if !predictor.is_frozen() {
        return Err(Error::config(
            "intensity predictor must be frozen before diffusion training",
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv_path = out_dir.join("loss.csv");
    if start_epoch == 0 && csv_path.exists() {
        std::fs::remove_file(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    let ckpt_path = out_dir.join("model.ckpt");

    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let epoch_global = start_epoch + epoch as u64;
        let mut rng = ChaCha20Rng::seed_from_u64(
            cfg.seed ^ (epoch_global.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut order: Vec<usize> = (0..data.items.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_acc = LossBreakdown::default();
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = Grads::zeros_like(&model.store);
            let mut batch_acc = LossBreakdown::default();
            for &idx in chunk {
                let item = &data.items[idx];
                let t = rng.gen_range(1..=schedule.t_steps);
                let eps = randn_like(&item.listener, &mut rng);
                let (losses, d_pred, cache) = item_losses_and_grad(
                    model, predictor, item, t, &eps, schedule, &cfg.weights,
                )?;
                if !losses.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged on sample `{}` (epoch {epoch_global}, t={t}); \
                         last checkpoint retained at {}",
                        item.sample_id,
                        ckpt_path.display()
                    )));
                }
                batch_acc.add(&losses);
                let _ = model.backward_train(&cache, &d_pred, &mut grads);
            }
            grads.scale(1.0 / chunk.len() as f32);
            opt.step(&mut model.store, &grads);
            batch_acc.scale(1.0 / chunk.len() as f64);
            epoch_acc.add(&batch_acc);
            n_batches += 1;
        }
        epoch_acc.scale(1.0 / n_batches as f64);
        append_csv(
            &csv_path,
            epoch_global + 1,
            &epoch_acc,
            epoch_global == 0 && epoch == 0,
        )?;
        epoch_losses.push(epoch_acc);

        if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
            model.save(&ckpt_path, epoch_global + 1)?;
        }
    }

    Ok(TrainOutcome {
        epoch_losses,
        final_checkpoint: ckpt_path,
        loss_csv: csv_path,
    })
}

/// Kept timesteps for DDIM: n evenly spaced points descending from T,
/// followed by 0.
pub fn ddim_timesteps(t_steps: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > t_steps {
        return Err(Error::config(format!(
            "ddim steps {n_steps} outside 1..={t_steps}"
        )));
    }
    let mut ts: Vec<usize> = (0..n_steps)
        .map(|i| {
            let frac = (n_steps - i) as f64 / n_steps as f64;
            (t_steps as f64 * frac).round() as usize
        })
        .collect();
    ts.dedup();
    ts.retain(|&t| t > 0);
    ts.push(0);
    Ok(ts)
}

/// Deterministic DDIM (eta = 0) over the model's clean-sample prediction.
/// `denoise` maps (H^(t), t) to the predicted clean sample; the output is
/// the normalized prediction at the final step.
pub fn ddim_sample<F, D>(
    denoise: D,
    schedule: &NoiseSchedule,
    n_steps: usize,
    seed: u64,
    l: usize,
) -> Result<Mat<F>>
where
    F: Real,
    D: Fn(&Mat<F>, usize) -> Result<Mat<F>>,
{
    let ts = ddim_timesteps(schedule.t_steps, n_steps)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut h: Mat<F> = Array2::from_shape_fn((l, MOTION_DIMS), |_| {
        F::from_f64(<StandardNormal as Distribution<f64>>::sample(
            &StandardNormal,
            &mut rng,
        ))
    });

    for pair in ts.windows(2) {
        let (t_cur, t_next) = (pair[0], pair[1]);
        let h0 = denoise(&h, t_cur)?;
        if h0.dim() != h.dim() {
            return Err(Error::shape(format!(
                "denoiser returned {:?}, expected {:?}",
                h0.dim(),
                h.dim()
            )));
        }
        let ab_cur = schedule.alpha_bar[t_cur];
        let ab_next = schedule.alpha_bar[t_next];
        let sig_cur = F::from_f64(ab_cur.sqrt());
        let noise_cur = F::from_f64((1.0 - ab_cur).sqrt());
        let sig_next = F::from_f64(ab_next.sqrt());
        let noise_next = F::from_f64((1.0 - ab_next).sqrt());

        // eps_hat = (h - sqrt(ab) h0) / sqrt(1 - ab)
        let mut next = Mat::zeros(h.dim());
        for ((i, j), v) in h.indexed_iter() {
            let eps_hat = (*v - sig_cur * h0[(i, j)]) / noise_cur;
            next[(i, j)] = sig_next * h0[(i, j)] + noise_next * eps_hat;
        }
        h = next;
    }
    Ok(h)
}
