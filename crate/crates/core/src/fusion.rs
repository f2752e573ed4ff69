//! Speaker/text fusion: embed speaker motion and audio, fuse them with
//! bidirectional cross-attention, then couple the result with frame-aligned
//! text embeddings through a temporal correlation matrix and a gated
//! residual (one gate per timestep, squashed into (0, 1)).

use ndarray::Axis;
use rand::Rng;

use crate::data::{AUDIO_FRAMES_PER_MOTION_FRAME, MOTION_DIMS, N_MELS};
use crate::error::{Error, Result};
use crate::nn::attention::{MhaCache, MultiHeadAttention};
use crate::nn::linear::Linear;
use crate::nn::posenc::position_encoding;
use crate::nn::real::Real;
use crate::nn::sigmoid;
use crate::nn::store::{Grads, Mat, ParamStore};

const GATE_VAR_EPS: f64 = 1e-12;

/// Non-overlapping pair mean along the time axis of a [n_mels, 2L] grid,
/// transposed to motion-frame order [L, n_mels].
pub fn pool_mel_pairs<F: Real>(mel: &Mat<F>) -> Result<Mat<F>> {
    let t_a = mel.ncols();
    if !t_a.is_multiple_of(AUDIO_FRAMES_PER_MOTION_FRAME) {
        return Err(Error::shape(format!(
            "audio frame count {t_a} is not a multiple of {AUDIO_FRAMES_PER_MOTION_FRAME}"
        )));
    }
    let l = t_a / AUDIO_FRAMES_PER_MOTION_FRAME;
    let half = F::from_f64(0.5);
    let mut out = Mat::zeros((l, mel.nrows()));
    for b in 0..mel.nrows() {
        for t in 0..l {
            out[(t, b)] = (mel[(b, 2 * t)] + mel[(b, 2 * t + 1)]) * half;
        }
    }
    Ok(out)
}

/// Projects speaker motion and pooled mel features to model width and adds
/// position encodings.
#[derive(Debug, Clone)]
pub struct SpeakerEmbedder {
    pub motion_proj: Linear,
    pub audio_proj: Linear,
}

pub struct SpeakerEmbedderCache<F> {
    pub motion_in: Mat<F>,
    pub pooled_mel: Mat<F>,
}

impl SpeakerEmbedder {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        SpeakerEmbedder {
            motion_proj: Linear::new(ps, &format!("{name}.motion_proj"), MOTION_DIMS, d_model, rng),
            audio_proj: Linear::new(ps, &format!("{name}.audio_proj"), N_MELS, d_model, rng),
        }
    }

    /// motion: [L, 56] normalized frames; mel: [n_mels, 2L] grid.
    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        motion: &Mat<F>,
        mel: &Mat<F>,
    ) -> Result<(Mat<F>, Mat<F>, SpeakerEmbedderCache<F>)> {
        let l = motion.nrows();
        if mel.ncols() != AUDIO_FRAMES_PER_MOTION_FRAME * l {
            return Err(Error::shape(format!(
                "mel grid has {} audio frames for {l} motion frames",
                mel.ncols()
            )));
        }
        let pooled = pool_mel_pairs(mel)?;
        let pe = position_encoding::<F>(l, self.motion_proj.dout);
        let mut motion_emb = self.motion_proj.forward(ps, motion);
        motion_emb += &pe;
        let mut audio_emb = self.audio_proj.forward(ps, &pooled);
        audio_emb += &pe;
        Ok((
            motion_emb,
            audio_emb,
            SpeakerEmbedderCache {
                motion_in: motion.clone(),
                pooled_mel: pooled,
            },
        ))
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &SpeakerEmbedderCache<F>,
        d_motion_emb: &Mat<F>,
        d_audio_emb: &Mat<F>,
        g: &mut Grads<F>,
    ) {
        let _ = self
            .motion_proj
            .backward(ps, &cache.motion_in, d_motion_emb, g);
        let _ = self.audio_proj.backward(ps, &cache.pooled_mel, d_audio_emb, g);
    }
}

/// Bidirectional fusion of motion and audio embeddings: two cross-attentions
/// combined by a learned linear mix on top of a motion residual.
#[derive(Debug, Clone)]
pub struct SpeakerFuser {
    pub motion_to_audio: MultiHeadAttention,
    pub audio_to_motion: MultiHeadAttention,
    pub mix: Linear,
    pub d_model: usize,
}

pub struct SpeakerFuserCache<F> {
    pub m2a: MhaCache<F>,
    pub a2m: MhaCache<F>,
    pub concat: Mat<F>,
}

impl SpeakerFuser {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SpeakerFuser {
            motion_to_audio: MultiHeadAttention::new(
                ps,
                &format!("{name}.m2a"),
                d_model,
                n_heads,
                rng,
            )?,
            audio_to_motion: MultiHeadAttention::new(
                ps,
                &format!("{name}.a2m"),
                d_model,
                n_heads,
                rng,
            )?,
            mix: Linear::new(ps, &format!("{name}.mix"), 2 * d_model, d_model, rng),
            d_model,
        })
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        motion_emb: &Mat<F>,
        audio_emb: &Mat<F>,
    ) -> Result<(Mat<F>, SpeakerFuserCache<F>)> {
        if motion_emb.dim() != audio_emb.dim() {
            return Err(Error::shape(format!(
                "motion {:?} and audio {:?} embeddings must match",
                motion_emb.dim(),
                audio_emb.dim()
            )));
        }
        let (m2a_out, m2a) = self.motion_to_audio.forward(ps, motion_emb, audio_emb);
        let (a2m_out, a2m) = self.audio_to_motion.forward(ps, audio_emb, motion_emb);
        let concat = ndarray::concatenate(Axis(1), &[m2a_out.view(), a2m_out.view()])
            .expect("matching row counts");
        let mut fused = self.mix.forward(ps, &concat);
        fused += motion_emb;
        Ok((fused, SpeakerFuserCache { m2a, a2m, concat }))
    }

    /// Returns (d motion_emb, d audio_emb).
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &SpeakerFuserCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> (Mat<F>, Mat<F>) {
        let d = self.d_model;
        let dconcat = self.mix.backward(ps, &cache.concat, dy, g);
        let d_m2a_out = dconcat.slice(ndarray::s![.., ..d]).to_owned();
        let d_a2m_out = dconcat.slice(ndarray::s![.., d..]).to_owned();
        let (mut d_motion, mut d_audio) = self.motion_to_audio.backward(ps, &cache.m2a, &d_m2a_out, g);
        let (d_audio_q, d_motion_kv) = self.audio_to_motion.backward(ps, &cache.a2m, &d_a2m_out, g);
        d_motion += &d_motion_kv;
        d_audio += &d_audio_q;
        d_motion += dy; // residual
        (d_motion, d_audio)
    }
}

/// Cache for [`temporal_semantic_interaction`].
pub struct TsiCache<F> {
    /// Temporal correlation matrix E_fused . E_text^T.
    pub w_fuse: Mat<F>,
    /// Column index of the row maximum (pooling route).
    pub argmax: Vec<usize>,
    /// Standardized pooled values.
    pub w_hat: Vec<F>,
    pub inv_std: F,
    /// Per-timestep gates in (0, 1).
    pub gates: Vec<F>,
    pub e_fused: Mat<F>,
    pub e_text: Mat<F>,
}

/// Couples fused speaker features with text embeddings:
/// W = E_fused E_text^T, w_t = max over the text axis, gates = logistic of
/// the standardized w, output = E_fused + E_text * gate per timestep.
pub fn temporal_semantic_interaction<F: Real>(
    e_fused: &Mat<F>,
    e_text: &Mat<F>,
) -> Result<(Mat<F>, TsiCache<F>)> {
    if e_fused.dim() != e_text.dim() {
        return Err(Error::shape(format!(
            "E_fused {:?} and E_text {:?} must match",
            e_fused.dim(),
            e_text.dim()
        )));
    }
    let l = e_fused.nrows();
    let w_fuse = e_fused.dot(&e_text.t());

    let mut w = Vec::with_capacity(l);
    let mut argmax = Vec::with_capacity(l);
    for i in 0..l {
        let row = w_fuse.row(i);
        let mut best = row[0];
        let mut best_j = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_j = j;
            }
        }
        w.push(best);
        argmax.push(best_j);
    }

    let inv_l = F::from_usize(l).recip();
    let mean = w.iter().cloned().sum::<F>() * inv_l;
    let var = w
        .iter()
        .map(|&v| {
            let c = v - mean;
            c * c
        })
        .sum::<F>()
        * inv_l;
    let inv_std = (var + F::from_f64(GATE_VAR_EPS)).sqrt().recip();
    let w_hat: Vec<F> = w.iter().map(|&v| (v - mean) * inv_std).collect();
    let gates: Vec<F> = w_hat.iter().map(|&v| sigmoid(v)).collect();

    let mut out = e_fused.clone();
    for i in 0..l {
        let gate = gates[i];
        for j in 0..e_text.ncols() {
            out[(i, j)] += e_text[(i, j)] * gate;
        }
    }
    Ok((
        out,
        TsiCache {
            w_fuse,
            argmax,
            w_hat,
            inv_std,
            gates,
            e_fused: e_fused.clone(),
            e_text: e_text.clone(),
        },
    ))
}

/// Returns (d E_fused, d E_text).
pub fn tsi_backward<F: Real>(cache: &TsiCache<F>, dy: &Mat<F>) -> (Mat<F>, Mat<F>) {
    let l = cache.e_fused.nrows();
    let d = cache.e_fused.ncols();
    let inv_l = F::from_usize(l).recip();

    let mut d_e_fused = dy.clone();
    let mut d_e_text = Mat::zeros((l, d));
    let mut d_gate = vec![F::zero(); l];
    for i in 0..l {
        let gate = cache.gates[i];
        let mut acc = F::zero();
        for j in 0..d {
            d_e_text[(i, j)] = dy[(i, j)] * gate;
            acc += dy[(i, j)] * cache.e_text[(i, j)];
        }
        d_gate[i] = acc;
    }

    // through the logistic and the standardization
    let d_what: Vec<F> = (0..l)
        .map(|i| {
            let gate = cache.gates[i];
            d_gate[i] * gate * (F::one() - gate)
        })
        .collect();
    let mean_dwhat = d_what.iter().cloned().sum::<F>() * inv_l;
    let mean_dwhat_what = d_what
        .iter()
        .zip(cache.w_hat.iter())
        .map(|(&a, &b)| a * b)
        .sum::<F>()
        * inv_l;
    let dw: Vec<F> = (0..l)
        .map(|i| cache.inv_std * (d_what[i] - mean_dwhat - cache.w_hat[i] * mean_dwhat_what))
        .collect();

    // max-pool routes each dw_i to the argmax column of W's row i;
    // W = E_fused E_text^T then gives rank-one updates per row.
    for i in 0..l {
        let j = cache.argmax[i];
        let dwi = dw[i];
        for c in 0..d {
            d_e_fused[(i, c)] += dwi * cache.e_text[(j, c)];
            d_e_text[(j, c)] += dwi * cache.e_fused[(i, c)];
        }
    }
    (d_e_fused, d_e_text)
}
