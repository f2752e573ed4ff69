//! Evaluation metric suite: FD, P-FD, MSE, SID, Var and rPCC, each computed
//! separately for expression and pose channels.

pub mod fd;
pub mod kmeans;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{EXPR_DIMS, MOTION_DIMS};
use crate::error::{Error, Result};

pub use fd::{frechet_distance, GaussianStats};
pub use kmeans::{cluster_entropy, KMeans};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum RpccMode {
    /// Pearson correlation of first temporal differences (default).
    #[default]
    Differenced,
    /// Pearson correlation of the raw channels.
    Raw,
}


#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    pub sid_k: usize,
    pub sid_seed: u64,
    pub rpcc_mode: RpccMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            sid_k: 16,
            sid_seed: 0,
            rpcc_mode: RpccMode::Differenced,
        }
    }
}

/// Paired Fréchet distance over concatenated [listener | speaker] frames:
/// generated pairs against ground-truth pairs with the same speakers.
pub fn paired_fd(
    gen: &[ArrayView2<'_, f64>],
    speakers: &[ArrayView2<'_, f64>],
    gt: &[ArrayView2<'_, f64>],
) -> Result<f64> {
    if gen.len() != speakers.len() || gt.len() != speakers.len() {
        return Err(Error::shape(format!(
            "paired FD needs equal set sizes, got {}/{}/{}",
            gen.len(),
            speakers.len(),
            gt.len()
        )));
    }
    let concat_frames = |list: &[ArrayView2<'_, f64>]| -> Result<Array2<f64>> {
        let mut rows = 0usize;
        for (a, s) in list.iter().zip(speakers.iter()) {
            if a.nrows() != s.nrows() {
                return Err(Error::shape(format!(
                    "unpaired lengths: listener {} vs speaker {}",
                    a.nrows(),
                    s.nrows()
                )));
            }
            rows += a.nrows();
        }
        let d = list[0].ncols() + speakers[0].ncols();
        let mut out = Array2::zeros((rows, d));
        let mut at = 0usize;
        for (a, s) in list.iter().zip(speakers.iter()) {
            for t in 0..a.nrows() {
                for j in 0..a.ncols() {
                    out[(at, j)] = a[(t, j)];
                }
                for j in 0..s.ncols() {
                    out[(at, a.ncols() + j)] = s[(t, j)];
                }
                at += 1;
            }
        }
        Ok(out)
    };
    let gen_pairs = concat_frames(gen)?;
    let gt_pairs = concat_frames(gt)?;
    let a = GaussianStats::fit(&gen_pairs.view())?;
    let b = GaussianStats::fit(&gt_pairs.view())?;
    frechet_distance(&a, &b)
}

/// Per-sequence histogram entropy of k-means cluster ids, averaged over
/// sequences. Clusters are fit on ground-truth frames with a fixed seed.
pub fn shannon_diversity(
    sequences: &[ArrayView2<'_, f64>],
    gt_frames: &ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::Domain("diversity needs at least one sequence".into()));
    }
    let km = KMeans::fit(gt_frames, k, seed, 100)?;
    let total: f64 = sequences.iter().map(|s| cluster_entropy(&km, s)).sum();
    Ok(total / sequences.len() as f64)
}

/// Per-channel population variance over time, averaged over channels and
/// sequences.
pub fn temporal_variance(sequences: &[ArrayView2<'_, f64>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::Domain("variance needs at least one sequence".into()));
    }
    let mut acc = 0.0f64;
    for seq in sequences {
        let l = seq.nrows();
        if l < 2 {
            return Err(Error::shape("variance needs at least 2 frames"));
        }
        let mut seq_acc = 0.0f64;
        for col in seq.columns() {
            let mean: f64 = col.sum() / l as f64;
            seq_acc += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        }
        acc += seq_acc / seq.ncols() as f64;
    }
    Ok(acc / sequences.len() as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma: f64 = a.iter().sum::<f64>() / n;
    let mb: f64 = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    // zero-variance convention: contribute 0
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Mean over channels of |Pearson correlation| between listener and speaker,
/// on first temporal differences by default.
pub fn rpcc(
    listener: &ArrayView2<'_, f64>,
    speaker: &ArrayView2<'_, f64>,
    mode: RpccMode,
) -> Result<f64> {
    if listener.dim() != speaker.dim() {
        return Err(Error::shape(format!(
            "listener {:?} and speaker {:?} must match",
            listener.dim(),
            speaker.dim()
        )));
    }
    let l = listener.nrows();
    if l < 3 {
        return Err(Error::shape(format!("rPCC needs at least 3 frames, got {l}")));
    }
    let d = listener.ncols();
    let series = |m: &ArrayView2<'_, f64>, c: usize| -> Vec<f64> {
        match mode {
            RpccMode::Differenced => (1..l).map(|t| m[(t, c)] - m[(t - 1, c)]).collect(),
            RpccMode::Raw => (0..l).map(|t| m[(t, c)]).collect(),
        }
    };
    let mut acc = 0.0f64;
    for c in 0..d {
        acc += pearson(&series(listener, c), &series(speaker, c)).abs();
    }
    Ok(acc / d as f64)
}

/// Mean squared error over paired frames.
pub fn paired_mse(gen: &[ArrayView2<'_, f64>], gt: &[ArrayView2<'_, f64>]) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape("MSE needs equal non-empty sets"));
    }
    let mut acc = 0.0f64;
    for (a, b) in gen.iter().zip(gt.iter()) {
        if a.dim() != b.dim() {
            return Err(Error::shape(format!(
                "paired shapes differ: {:?} vs {:?}",
                a.dim(),
                b.dim()
            )));
        }
        let n = a.len() as f64;
        acc += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
    }
    Ok(acc / gen.len() as f64)
}

/// One generated/reference pair, raw (denormalized) motion.
pub struct EvalPair {
    pub sample_id: String,
    pub generated: Array2<f64>,
    pub gt_listener: Array2<f64>,
    pub speaker: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelGroup {
    Exp,
    Pose,
}

impl ChannelGroup {
    pub fn columns(&self) -> std::ops::Range<usize> {
        match self {
            ChannelGroup::Exp => 0..EXPR_DIMS,
            ChannelGroup::Pose => EXPR_DIMS..MOTION_DIMS,
        }
    }
}

pub const METRIC_NAMES: [&str; 6] = ["fd", "pfd", "mse", "sid", "var", "rpcc"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCell {
    pub metric: String,
    pub group: ChannelGroup,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub cells: Vec<MetricCell>,
    pub n_sequences: usize,
    pub n_frames: usize,
    pub config: MetricConfig,
}

impl MetricReport {
    pub fn get(&self, metric: &str, group: ChannelGroup) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.metric == metric && c.group == group)
            .map(|c| c.value)
    }

    pub fn to_json(&self, path: &Path) -> Result<()> {
        let pstr = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| Error::io(&pstr, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let pstr = path.display().to_string();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(&pstr, e))?;
        writeln!(file, "metric,group,value").map_err(|e| Error::io(&pstr, e))?;
        for cell in &self.cells {
            let group = match cell.group {
                ChannelGroup::Exp => "exp",
                ChannelGroup::Pose => "pose",
            };
            writeln!(file, "{},{},{:.8}", cell.metric, group, cell.value)
                .map_err(|e| Error::io(&pstr, e))?;
        }
        Ok(())
    }
}

fn slice_group(m: &Array2<f64>, group: ChannelGroup) -> ArrayView2<'_, f64> {
    m.slice(ndarray::s![.., group.columns()])
}

/// Runs every metric twice (expression and pose channels) over paired
/// generated and ground-truth sets.
pub fn evaluate_suite(pairs: &[EvalPair], config: &MetricConfig) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Domain("evaluation needs at least one pair".into()));
    }
    for pair in pairs {
        if pair.generated.dim() != pair.gt_listener.dim()
            || pair.generated.dim() != pair.speaker.dim()
        {
            return Err(Error::shape(format!(
                "sample `{}` has inconsistent shapes",
                pair.sample_id
            )));
        }
        if pair.generated.ncols() != MOTION_DIMS {
            return Err(Error::shape(format!(
                "sample `{}` must carry {MOTION_DIMS} channels",
                pair.sample_id
            )));
        }
    }

    let mut cells = Vec::with_capacity(12);
    for group in [ChannelGroup::Exp, ChannelGroup::Pose] {
        let gen: Vec<ArrayView2<'_, f64>> =
            pairs.iter().map(|p| slice_group(&p.generated, group)).collect();
        let gt: Vec<ArrayView2<'_, f64>> =
            pairs.iter().map(|p| slice_group(&p.gt_listener, group)).collect();
        let spk: Vec<ArrayView2<'_, f64>> =
            pairs.iter().map(|p| slice_group(&p.speaker, group)).collect();

        let pooled = |views: &[ArrayView2<'_, f64>]| -> Array2<f64> {
            let rows: usize = views.iter().map(|v| v.nrows()).sum();
            let d = views[0].ncols();
            let mut out = Array2::zeros((rows, d));
            let mut at = 0;
            for v in views {
                out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
                at += v.nrows();
            }
            out
        };
        let gen_frames = pooled(&gen);
        let gt_frames = pooled(&gt);

        let fd_value = frechet_distance(
            &GaussianStats::fit(&gen_frames.view())?,
            &GaussianStats::fit(&gt_frames.view())?,
        )?;
        let pfd_value = paired_fd(&gen, &spk, &gt)?;
        let mse_value = paired_mse(&gen, &gt)?;
        let sid_value = shannon_diversity(&gen, &gt_frames.view(), config.sid_k, config.sid_seed)?;
        let var_value = temporal_variance(&gen)?;
        let rpcc_value = {
            let mut acc = 0.0;
            for (g, s) in gen.iter().zip(spk.iter()) {
                acc += rpcc(g, s, config.rpcc_mode)?;
            }
            acc / gen.len() as f64
        };

        for (metric, value) in METRIC_NAMES.iter().zip([
            fd_value, pfd_value, mse_value, sid_value, var_value, rpcc_value,
        ]) {
            cells.push(MetricCell {
                metric: metric.to_string(),
                group,
                value,
            });
        }
    }

    let n_frames = pairs.iter().map(|p| p.generated.nrows()).sum();
    Ok(MetricReport {
        cells,
        n_sequences: pairs.len(),
        n_frames,
        config: config.clone(),
    })
}

/// Converts an f32 frame matrix to the metric dtype.
pub fn to_f64(frames: &Array2<f32>) -> Array2<f64> {
    frames.mapv(|v| v as f64)
}

/// Stacks sequences along time (utility for FD inputs).
pub fn stack_frames(views: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    let rows: usize = views.iter().map(|v| v.nrows()).sum();
    let d = views.first().map(|v| v.ncols()).unwrap_or(0);
    let mut out = Array2::zeros((rows, d));
    let mut at = 0;
    for v in views {
        out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
        at += v.nrows();
    }
    out
}
