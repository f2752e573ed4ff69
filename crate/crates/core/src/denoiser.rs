//! Transformer denoiser predicting the clean listener motion from a noised
//! input plus all conditions. Blocks run pre-norm self-attention, pre-norm
//! cross-attention to the injected conditions, the emotional-control layer
//! and a pre-norm MLP, with the timestep embedding added to every token at
//! block entry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MOTION_DIMS;
use crate::emotion::{EmotionalControl, EmotionalControlCache};
use crate::error::{Error, Result};
use crate::nn::activation::{gelu, gelu_backward};
use crate::nn::attention::{MhaCache, MultiHeadAttention};
use crate::nn::linear::Linear;
use crate::nn::norm::{LayerNorm, LayerNormCache};
use crate::nn::posenc::{position_encoding, timestep_sinusoid};
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Sequence length the model is trained for.
    pub frames: usize,
    pub motion_dims: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            d_model: 64,
            n_blocks: 4,
            n_heads: 4,
            frames: 60,
            motion_dims: MOTION_DIMS,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::config("need at least one block"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.motion_dims != MOTION_DIMS {
            return Err(Error::config(format!(
                "motion_dims must be {MOTION_DIMS}"
            )));
        }
        Ok(())
    }
}

/// Sinusoidal timestep encoding followed by a 2-layer learned map.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct TimestepCache<F> {
    pub sin_row: Mat<F>,
    pub h_pre: Mat<F>,
    pub h_act: Mat<F>,
}

impl TimestepEmbedder {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        TimestepEmbedder {
            fc1: Linear::new(ps, &format!("{name}.fc1"), d_model, d_model, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), d_model, d_model, rng),
        }
    }

    /// `t` must lie in 0..=t_max (t_max = diffusion steps T).
    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        t: usize,
        t_max: usize,
    ) -> Result<(Mat<F>, TimestepCache<F>)> {
        if t > t_max {
            return Err(Error::Domain(format!(
                "timestep {t} outside 0..={t_max}"
            )));
        }
        let sin_row = timestep_sinusoid::<F>(t, self.fc1.din);
        let h_pre = self.fc1.forward(ps, &sin_row);
        let h_act = gelu(&h_pre);
        let out = self.fc2.forward(ps, &h_act);
        Ok((
            out,
            TimestepCache {
                sin_row,
                h_pre,
                h_act,
            },
        ))
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &TimestepCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) {
        let dh_act = self.fc2.backward(ps, &cache.h_act, dy, g);
        let dh_pre = gelu_backward(&cache.h_pre, &dh_act);
        let _ = self.fc1.backward(ps, &cache.sin_row, &dh_pre, g);
    }
}

#[derive(Debug, Clone)]
pub struct DitBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub control: EmotionalControl,
    pub ln3: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct DitBlockCache<F> {
    pub x0: Mat<F>,
    pub ln1: LayerNormCache<F>,
    pub self_attn: MhaCache<F>,
    pub a: Mat<F>,
    pub ln2: LayerNormCache<F>,
    pub cross_attn: MhaCache<F>,
    pub b: Mat<F>,
    pub control: EmotionalControlCache<F>,
    pub c: Mat<F>,
    pub ln3: LayerNormCache<F>,
    pub h_pre: Mat<F>,
    pub h_act: Mat<F>,
}

impl DitBlock {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DitBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d_model, rng),
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self_attn"), d_model, n_heads, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d_model, rng),
            cross_attn: MultiHeadAttention::new(
                ps,
                &format!("{name}.cross_attn"),
                d_model,
                n_heads,
                rng,
            )?,
            control: EmotionalControl::new(ps, &format!("{name}.control"), d_model, n_heads, rng)?,
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), d_model, rng),
            fc1: Linear::new(ps, &format!("{name}.mlp.fc1"), d_model, 4 * d_model, rng),
            fc2: Linear::new(ps, &format!("{name}.mlp.fc2"), 4 * d_model, d_model, rng),
        })
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: &Mat<F>,
        cond_injected: &Mat<F>,
        tag_emb: &Mat<F>,
        t_emb: &Mat<F>,
    ) -> Result<(Mat<F>, DitBlockCache<F>)> {
        if x.dim() != cond_injected.dim() || x.dim() != tag_emb.dim() {
            return Err(Error::shape(format!(
                "block inputs must share shape, got {:?} / {:?} / {:?}",
                x.dim(),
                cond_injected.dim(),
                tag_emb.dim()
            )));
        }
        let mut x0 = x.clone();
        x0 += t_emb; // broadcast over tokens

        let (n1, ln1_cache) = self.ln1.forward(ps, &x0);
        let (sa_out, sa_cache) = self.self_attn.forward(ps, &n1, &n1);
        let a = &x0 + &sa_out;

        let (n2, ln2_cache) = self.ln2.forward(ps, &a);
        let (ca_out, ca_cache) = self.cross_attn.forward(ps, &n2, cond_injected);
        let b = &a + &ca_out;

        let (c, control_cache) = self.control.forward(ps, &b, cond_injected, tag_emb)?;

        let (n3, ln3_cache) = self.ln3.forward(ps, &c);
        let h_pre = self.fc1.forward(ps, &n3);
        let h_act = gelu(&h_pre);
        let mlp_out = self.fc2.forward(ps, &h_act);
        let y = &c + &mlp_out;

        Ok((
            y,
            DitBlockCache {
                x0,
                ln1: ln1_cache,
                self_attn: sa_cache,
                a,
                ln2: ln2_cache,
                cross_attn: ca_cache,
                b,
                control: control_cache,
                c,
                ln3: ln3_cache,
                h_pre,
                h_act,
            },
        ))
    }

    /// Returns (dx, d cond_injected, d tag_emb, d t_emb).
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &DitBlockCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> (Mat<F>, Mat<F>, Mat<F>, Mat<F>) {
        // y = c + fc2(gelu(fc1(ln3(c))))
        let mut dc = dy.clone();
        let dh_act = self.fc2.backward(ps, &cache.h_act, dy, g);
        let dh_pre = gelu_backward(&cache.h_pre, &dh_act);
        // fc1 input is ln3 output = xhat * gamma + beta; reconstruct it
        let n3 = &cache.ln3.xhat * ps.get(self.ln3.gamma) + ps.get(self.ln3.beta);
        let dn3 = self.fc1.backward(ps, &n3, &dh_pre, g);
        dc += &self.ln3.backward(ps, &cache.ln3, &dn3, g);

        // c = control(b, cond, tag)
        let (db, d_cond_a, d_tag) = self.control.backward(ps, &cache.control, &dc, g);

        // b = a + cross_attn(ln2(a), cond)
        let da_res = db.clone();
        let (dn2, d_cond_b) = self.cross_attn.backward(ps, &cache.cross_attn, &db, g);
        let mut da = self.ln2.backward(ps, &cache.ln2, &dn2, g);
        da += &da_res;

        // a = x0 + self_attn(ln1(x0), ln1(x0))
        let dx0_res = da.clone();
        let (dn1_q, dn1_kv) = self.self_attn.backward(ps, &cache.self_attn, &da, g);
        let dn1 = dn1_q + dn1_kv;
        let mut dx0 = self.ln1.backward(ps, &cache.ln1, &dn1, g);
        dx0 += &dx0_res;

        let d_t_emb = dx0
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0));
        let d_cond = d_cond_a + d_cond_b;
        (dx0, d_cond, d_tag, d_t_emb)
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub t_embed: TimestepEmbedder,
    pub in_proj: Linear,
    pub blocks: Vec<DitBlock>,
    pub final_ln: LayerNorm,
    pub out_proj: Linear,
}

pub struct DenoiserCache<F> {
    pub t: TimestepCache<F>,
    pub t_emb: Mat<F>,
    pub h_in: Mat<F>,
    pub blocks: Vec<DitBlockCache<F>>,
    pub final_ln: LayerNormCache<F>,
    pub final_n: Mat<F>,
}

impl Denoiser {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        cfg: DenoiserConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            blocks.push(DitBlock::new(
                ps,
                &format!("{name}.block{i}"),
                cfg.d_model,
                cfg.n_heads,
                rng,
            )?);
        }
        Ok(Denoiser {
            cfg,
            t_embed: TimestepEmbedder::new(ps, &format!("{name}.t_embed"), cfg.d_model, rng),
            in_proj: Linear::new(ps, &format!("{name}.in_proj"), cfg.motion_dims, cfg.d_model, rng),
            blocks,
            final_ln: LayerNorm::new(ps, &format!("{name}.final_ln"), cfg.d_model, rng),
            out_proj: Linear::new(ps, &format!("{name}.out_proj"), cfg.d_model, cfg.motion_dims, rng),
        })
    }

    /// Predicts the clean motion from the noised input and conditions.
    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        h_t: &Mat<F>,
        cond_injected: &Mat<F>,
        tag_emb: &Mat<F>,
        t: usize,
        t_max: usize,
    ) -> Result<(Mat<F>, DenoiserCache<F>)> {
        let l = h_t.nrows();
        if h_t.ncols() != self.cfg.motion_dims {
            return Err(Error::shape(format!(
                "noised motion has {} channels, expected {}",
                h_t.ncols(),
                self.cfg.motion_dims
            )));
        }
        if cond_injected.nrows() != l || tag_emb.nrows() != l {
            return Err(Error::shape(format!(
                "conditions cover {} frames but motion has {l}",
                cond_injected.nrows()
            )));
        }
        let (t_emb, t_cache) = self.t_embed.forward(ps, t, t_max)?;
        let h_in = h_t.clone();
        let mut x = self.in_proj.forward(ps, &h_in);
        x += &position_encoding::<F>(l, self.cfg.d_model);

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(ps, &x, cond_injected, tag_emb, &t_emb)?;
            block_caches.push(cache);
            x = next;
        }
        let (final_n, final_ln_cache) = self.final_ln.forward(ps, &x);
        let out = self.out_proj.forward(ps, &final_n);
        Ok((
            out,
            DenoiserCache {
                t: t_cache,
                t_emb,
                h_in,
                blocks: block_caches,
                final_ln: final_ln_cache,
                final_n,
            },
        ))
    }

    /// Returns (d h_t, d cond_injected, d tag_emb).
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &DenoiserCache<F>,
        d_out: &Mat<F>,
        g: &mut Grads<F>,
    ) -> (Mat<F>, Mat<F>, Mat<F>) {
        let dims = (cache.h_in.nrows(), self.cfg.d_model);
        let d_final_n = self.out_proj.backward(ps, &cache.final_n, d_out, g);
        let mut dx = self.final_ln.backward(ps, &cache.final_ln, &d_final_n, g);

        let mut d_cond = Mat::zeros(dims);
        let mut d_tag = Mat::zeros(dims);
        let mut d_t_emb = Mat::zeros((1, self.cfg.d_model));
        for (block, bcache) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            let (dxb, dcb, dtb, dteb) = block.backward(ps, bcache, &dx, g);
            dx = dxb;
            d_cond += &dcb;
            d_tag += &dtb;
            d_t_emb += &dteb;
        }
        self.t_embed.backward(ps, &cache.t, &d_t_emb, g);
        let d_h = self.in_proj.backward(ps, &cache.h_in, &dx, g);
        (d_h, d_cond, d_tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input_grad, check_param_grads};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_mat(rows: usize, cols: usize, scale: f64) -> Mat<f64> {
        Mat::from_shape_fn((rows, cols), |(i, j)| {
            ((i * 11 + j * 3) as f64 * 0.23).sin() * scale
        })
    }

    fn micro(cfg: DenoiserConfig, seed: u64) -> (ParamStore<f64>, Denoiser) {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let den = Denoiser::new(&mut ps, "den", cfg, &mut rng).unwrap();
        (ps, den)
    }

    #[test]
    fn timestep_embedder_distinguishes_steps() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb = TimestepEmbedder::new(&mut ps, "t", 16, &mut rng);
        let (a, _) = emb.forward(&ps, 3, 100).unwrap();
        let (b, _) = emb.forward(&ps, 4, 100).unwrap();
        let diff: f64 = (&a - &b).iter().map(|v| v.abs()).sum();
        assert!(diff > 1e-9);
        assert!(emb.forward(&ps, 101, 100).is_err());
    }

    #[test]
    fn block_output_shape_follows_input() {
        for l in [4usize, 60, 240] {
            let cfg = DenoiserConfig {
                d_model: 8,
                n_blocks: 1,
                n_heads: 2,
                frames: l,
                motion_dims: MOTION_DIMS,
            };
            let (ps, den) = micro(cfg, 2);
            let x = toy_mat(l, 8, 0.5);
            let cond = toy_mat(l, 8, 0.4);
            let tag = toy_mat(l, 8, 0.3);
            let (t_emb, _) = den.t_embed.forward(&ps, 1, 10).unwrap();
            let (y, _) = den.blocks[0].forward(&ps, &x, &cond, &tag, &t_emb).unwrap();
            assert_eq!(y.dim(), (l, 8));
        }
    }

    #[test]
    fn zeroed_weights_still_produce_finite_output() {
        let cfg = DenoiserConfig {
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            frames: 4,
            motion_dims: MOTION_DIMS,
        };
        let (mut ps, den) = micro(cfg, 3);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).fill(0.0);
        }
        let x = toy_mat(4, 8, 0.5);
        let cond = toy_mat(4, 8, 0.4);
        let tag = toy_mat(4, 8, 0.3);
        let (t_emb, _) = den.t_embed.forward(&ps, 0, 10).unwrap();
        let (y, _) = den.blocks[0].forward(&ps, &x, &cond, &tag, &t_emb).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic_and_shaped() {
        let cfg = DenoiserConfig {
            d_model: 8,
            n_blocks: 2,
            n_heads: 2,
            frames: 6,
            motion_dims: MOTION_DIMS,
        };
        let (ps, den) = micro(cfg, 4);
        let h_t = toy_mat(6, MOTION_DIMS, 1.0);
        let cond = toy_mat(6, 8, 0.5);
        let tag = toy_mat(6, 8, 0.4);
        let (a, _) = den.forward(&ps, &h_t, &cond, &tag, 5, 10).unwrap();
        let (b, _) = den.forward(&ps, &h_t, &cond, &tag, 5, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (6, MOTION_DIMS));
    }

    #[test]
    fn micro_forward_matches_composed_sublayer_oracle() {
        let cfg = DenoiserConfig {
            d_model: 4,
            n_blocks: 1,
            n_heads: 1,
            frames: 2,
            motion_dims: MOTION_DIMS,
        };
        let (ps, den) = micro(cfg, 5);
        let h_t = toy_mat(2, MOTION_DIMS, 0.8);
        let cond = toy_mat(2, 4, 0.5);
        let tag = toy_mat(2, 4, 0.4);
        let (y, _) = den.forward(&ps, &h_t, &cond, &tag, 3, 10).unwrap();

        // recompose through the public sub-layers
        let (t_emb, _) = den.t_embed.forward(&ps, 3, 10).unwrap();
        let mut x = den.in_proj.forward(&ps, &h_t);
        x += &position_encoding::<f64>(2, 4);
        let block = &den.blocks[0];
        let mut x0 = x.clone();
        x0 += &t_emb;
        let (n1, _) = block.ln1.forward(&ps, &x0);
        let (sa, _) = block.self_attn.forward(&ps, &n1, &n1);
        let a = &x0 + &sa;
        let (n2, _) = block.ln2.forward(&ps, &a);
        let (ca, _) = block.cross_attn.forward(&ps, &n2, &cond);
        let b = &a + &ca;
        let (c, _) = block.control.forward(&ps, &b, &cond, &tag).unwrap();
        let (n3, _) = block.ln3.forward(&ps, &c);
        let h = crate::nn::activation::gelu(&block.fc1.forward(&ps, &n3));
        let out_block = &c + &block.fc2.forward(&ps, &h);
        let (fin, _) = den.final_ln.forward(&ps, &out_block);
        let expect = den.out_proj.forward(&ps, &fin);
        assert!((&y - &expect).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = DenoiserConfig {
            d_model: 4,
            n_blocks: 1,
            n_heads: 2,
            frames: 4,
            motion_dims: MOTION_DIMS,
        };
        let (mut ps, den) = micro(cfg, 6);
        let h_t = toy_mat(4, MOTION_DIMS, 0.7);
        let cond = toy_mat(4, 4, 0.5);
        let tag = toy_mat(4, 4, 0.4);

        let loss = |ps: &ParamStore<f64>| -> f64 {
            let (y, _) = den.forward(ps, &h_t, &cond, &tag, 2, 8).unwrap();
            y.iter().map(|v| v * v).sum()
        };
        let (y, cache) = den.forward(&ps, &h_t, &cond, &tag, 2, 8).unwrap();
        let dy = y.mapv(|v| 2.0 * v);
        let mut g = Grads::zeros_like(&ps);
        let (dh, dcond, dtag) = den.backward(&ps, &cache, &dy, &mut g);

        // spot-check parameters across depth: first, middle and last tensors
        let all_ids: Vec<_> = ps.ids().collect();
        let picked: Vec<_> = all_ids
            .iter()
            .step_by((all_ids.len() / 12).max(1))
            .cloned()
            .collect();
        let report = check_param_grads(&mut ps, &g, &picked, 1e-6, |ps| loss(ps));
        assert!(report.ok(1e-3), "params: {:?}", report.worst);

        let report = check_input_grad(&h_t, &dh, 1e-6, |x| {
            let (y, _) = den.forward(&ps, x, &cond, &tag, 2, 8).unwrap();
            y.iter().map(|v| v * v).sum()
        });
        assert!(report.ok(1e-3), "h_t: {:?}", report.worst);
        let report = check_input_grad(&cond, &dcond, 1e-6, |x| {
            let (y, _) = den.forward(&ps, &h_t, x, &tag, 2, 8).unwrap();
            y.iter().map(|v| v * v).sum()
        });
        assert!(report.ok(1e-3), "cond: {:?}", report.worst);
        let report = check_input_grad(&tag, &dtag, 1e-6, |x| {
            let (y, _) = den.forward(&ps, &h_t, &cond, x, 2, 8).unwrap();
            y.iter().map(|v| v * v).sum()
        });
        assert!(report.ok(1e-3), "tag: {:?}", report.worst);
    }
}
