//! Emotional intensity pathway: tag embedding, element-wise injection into
//! the fused conditions, and the emotional-control layer (cross-attention
//! with tags as query, temporal convolution, AdaIN modulation, residual).

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::attention::{MhaCache, MultiHeadAttention};
use crate::nn::conv::Conv1d;
use crate::nn::linear::Linear;
use crate::nn::posenc::position_encoding;
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

/// Instance-norm denominators below this are treated as constant channels.
pub const ADAIN_SIGMA_EPS: f64 = 1e-8;

/// Projects an upsampled [L, 2] VA track to model width and adds position
/// encoding.
#[derive(Debug, Clone)]
pub struct TagEmbedder {
    pub proj: Linear,
}

pub struct TagEmbedderCache<F> {
    pub tags_upsampled: Mat<F>,
}

impl TagEmbedder {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        TagEmbedder {
            proj: Linear::new(ps, &format!("{name}.proj"), 2, d_model, rng),
        }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tags_upsampled: &Mat<F>,
    ) -> Result<(Mat<F>, TagEmbedderCache<F>)> {
        if tags_upsampled.ncols() != 2 {
            return Err(Error::shape(format!(
                "upsampled tags need 2 columns, got {}",
                tags_upsampled.ncols()
            )));
        }
        let mut out = self.proj.forward(ps, tags_upsampled);
        out += &position_encoding::<F>(tags_upsampled.nrows(), self.proj.dout);
        Ok((
            out,
            TagEmbedderCache {
                tags_upsampled: tags_upsampled.clone(),
            },
        ))
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &TagEmbedderCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) {
        let _ = self.proj.backward(ps, &cache.tags_upsampled, dy, g);
    }
}

/// Hadamard product of the semantic-fused features with the tag embedding.
pub fn inject_tags<F: Real>(f_fused: &Mat<F>, tag_emb: &Mat<F>) -> Result<Mat<F>> {
    if f_fused.dim() != tag_emb.dim() {
        return Err(Error::shape(format!(
            "F_fused {:?} and tag embedding {:?} must match",
            f_fused.dim(),
            tag_emb.dim()
        )));
    }
    Ok(f_fused * tag_emb)
}

/// Returns (d F_fused, d tag_emb).
pub fn inject_tags_backward<F: Real>(
    f_fused: &Mat<F>,
    tag_emb: &Mat<F>,
    dy: &Mat<F>,
) -> (Mat<F>, Mat<F>) {
    (dy * tag_emb, dy * f_fused)
}

pub struct AdainCache<F> {
    pub xhat: Mat<F>,
    pub sigma_x: Vec<F>,
    pub mu_style: Vec<F>,
    pub sigma_style: Vec<F>,
    pub style: Mat<F>,
    /// Channels that hit the epsilon guard (diagnostics).
    pub constant_channels: Vec<usize>,
}

/// Adaptive instance normalization over the temporal axis: per channel,
/// re-statistics x to style's mean/std. Channels whose own std falls below
/// [`ADAIN_SIGMA_EPS`] are emitted as the style mean (epsilon guard) and
/// recorded in the cache diagnostics.
pub fn adain_forward<F: Real>(x: &Mat<F>, style: &Mat<F>) -> Result<(Mat<F>, AdainCache<F>)> {
    if x.dim() != style.dim() {
        return Err(Error::shape(format!(
            "x {:?} and style {:?} must match",
            x.dim(),
            style.dim()
        )));
    }
    let (l, d) = x.dim();
    if l < 1 {
        return Err(Error::shape("adain needs at least one frame"));
    }
    let inv_l = F::from_usize(l).recip();
    let eps = F::from_f64(ADAIN_SIGMA_EPS);

    let mut out = Mat::zeros((l, d));
    let mut xhat = Mat::zeros((l, d));
    let mut sigma_x = Vec::with_capacity(d);
    let mut mu_style = Vec::with_capacity(d);
    let mut sigma_style = Vec::with_capacity(d);
    let mut constant_channels = Vec::new();

    for c in 0..d {
        let xc = x.column(c);
        let sc = style.column(c);
        let mu_x = xc.iter().cloned().sum::<F>() * inv_l;
        let var_x = xc
            .iter()
            .map(|&v| {
                let u = v - mu_x;
                u * u
            })
            .sum::<F>()
            * inv_l;
        let sx = var_x.sqrt();
        let mu_s = sc.iter().cloned().sum::<F>() * inv_l;
        let var_s = sc
            .iter()
            .map(|&v| {
                let u = v - mu_s;
                u * u
            })
            .sum::<F>()
            * inv_l;
        let ss = var_s.sqrt();
        sigma_x.push(sx);
        mu_style.push(mu_s);
        sigma_style.push(ss);

        if sx < eps {
            constant_channels.push(c);
            for t in 0..l {
                xhat[(t, c)] = F::zero();
                out[(t, c)] = mu_s;
            }
        } else {
            for t in 0..l {
                let h = (x[(t, c)] - mu_x) / sx;
                xhat[(t, c)] = h;
                out[(t, c)] = h * ss + mu_s;
            }
        }
    }
    Ok((
        out,
        AdainCache {
            xhat,
            sigma_x,
            mu_style,
            sigma_style,
            style: style.clone(),
            constant_channels,
        },
    ))
}

/// Returns (dx, dstyle).
pub fn adain_backward<F: Real>(cache: &AdainCache<F>, dy: &Mat<F>) -> (Mat<F>, Mat<F>) {
    let (l, d) = cache.xhat.dim();
    let inv_l = F::from_usize(l).recip();
    let eps = F::from_f64(ADAIN_SIGMA_EPS);
    let mut dx = Mat::zeros((l, d));
    let mut dstyle = Mat::zeros((l, d));

    for c in 0..d {
        let guarded = cache.sigma_x[c] < eps;
        let mut d_mu_s = F::zero();
        let mut d_sigma_s = F::zero();
        for t in 0..l {
            d_mu_s += dy[(t, c)];
            d_sigma_s += dy[(t, c)] * cache.xhat[(t, c)];
        }

        // style gradient: mu_s/sigma_s are temporal statistics of the
        // style column
        let ss_safe = cache.sigma_style[c].max(F::from_f64(ADAIN_SIGMA_EPS));
        for t in 0..l {
            let centered = cache.style[(t, c)] - cache.mu_style[c];
            let mut grad = d_mu_s * inv_l;
            if !guarded {
                grad += d_sigma_s * centered * inv_l / ss_safe;
            }
            dstyle[(t, c)] = grad;
        }

        if guarded {
            continue; // constant input channel: no gradient to x
        }
        // x gradient: standardization backward scaled by sigma_style
        let scale = cache.sigma_style[c] / cache.sigma_x[c];
        let mut mean_dy = F::zero();
        let mut mean_dy_xhat = F::zero();
        for t in 0..l {
            mean_dy += dy[(t, c)];
            mean_dy_xhat += dy[(t, c)] * cache.xhat[(t, c)];
        }
        mean_dy *= inv_l;
        mean_dy_xhat *= inv_l;
        for t in 0..l {
            dx[(t, c)] = scale * (dy[(t, c)] - mean_dy - cache.xhat[(t, c)] * mean_dy_xhat);
        }
    }
    (dx, dstyle)
}

/// Emotional control layer: keys/values come from the temporal concatenation
/// of the listener features and the enhanced conditions, queries from the
/// tag embedding; the attended guidance passes through a kernel-3 temporal
/// convolution and modulates the listener features via AdaIN, with a
/// residual add so the layer can approach identity.
#[derive(Debug, Clone)]
pub struct EmotionalControl {
    pub attn: MultiHeadAttention,
    pub conv: Conv1d,
    pub d_model: usize,
}

pub struct EmotionalControlCache<F> {
    pub attn: MhaCache<F>,
    pub f_emo: Mat<F>,
    pub adain: AdainCache<F>,
}

impl EmotionalControl {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EmotionalControl {
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), d_model, n_heads, rng)?,
            conv: Conv1d::new(ps, &format!("{name}.conv"), d_model, d_model, rng),
            d_model,
        })
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        f_listener: &Mat<F>,
        cond_enhanced: &Mat<F>,
        tag_emb: &Mat<F>,
    ) -> Result<(Mat<F>, EmotionalControlCache<F>)> {
        let dims = f_listener.dim();
        if cond_enhanced.dim() != dims || tag_emb.dim() != dims {
            return Err(Error::shape(format!(
                "emotional control inputs must share shape, got {:?} / {:?} / {:?}",
                dims,
                cond_enhanced.dim(),
                tag_emb.dim()
            )));
        }
        let kv = ndarray::concatenate(ndarray::Axis(0), &[f_listener.view(), cond_enhanced.view()])
            .expect("matching widths");
        let (f_emo, attn_cache) = self.attn.forward(ps, tag_emb, &kv);
        let modulation = self.conv.forward(ps, &f_emo);
        let (ada_out, adain_cache) = adain_forward(f_listener, &modulation)?;
        let out = ada_out + f_listener;
        Ok((
            out,
            EmotionalControlCache {
                attn: attn_cache,
                f_emo,
                adain: adain_cache,
            },
        ))
    }

    /// Returns (d f_listener, d cond_enhanced, d tag_emb).
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &EmotionalControlCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> (Mat<F>, Mat<F>, Mat<F>) {
        let l = dy.nrows();
        let (dx_ada, d_mod) = adain_backward(&cache.adain, dy);
        let d_f_emo = self.conv.backward(ps, &cache.f_emo, &d_mod, g);
        let (d_tag, d_kv) = self.attn.backward(ps, &cache.attn, &d_f_emo, g);
        let mut d_f_listener = dx_ada;
        d_f_listener += dy; // residual
        d_f_listener += &d_kv.slice(ndarray::s![..l, ..]);
        let d_cond = d_kv.slice(ndarray::s![l.., ..]).to_owned();
        (d_f_listener, d_cond, d_tag)
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
            ((i * 7 + j * 5) as f64 * 0.29).sin() * scale
        })
    }

    #[test]
    fn zero_tags_embed_to_position_encoding_only() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let emb = TagEmbedder::new(&mut ps, "tag", 8, &mut rng);
        ps.get_mut(emb.proj.b).fill(0.0);
        let tags = Mat::zeros((6, 2));
        let (out, _) = emb.forward(&ps, &tags).unwrap();
        let pe = position_encoding::<f64>(6, 8);
        assert!((&out - &pe).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_tags_give_equal_rows_before_position_add() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let emb = TagEmbedder::new(&mut ps, "tag", 8, &mut rng);
        let mut tags = Mat::zeros((5, 2));
        tags.column_mut(0).fill(0.3);
        tags.column_mut(1).fill(-0.6);
        let (out, _) = emb.forward(&ps, &tags).unwrap();
        let pe = position_encoding::<f64>(5, 8);
        let stripped = &out - &pe;
        for t in 1..5 {
            for j in 0..8 {
                assert!((stripped[(t, j)] - stripped[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tag_projection_matches_hand_multiply() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let emb = TagEmbedder::new(&mut ps, "tag", 4, &mut rng);
        let tags = Mat::from_shape_fn((12, 2), |(i, j)| (i as f64 * 0.1) - (j as f64 * 0.4));
        let (out, _) = emb.forward(&ps, &tags).unwrap();
        let w = ps.get(emb.proj.w);
        let b = ps.get(emb.proj.b);
        let pe = position_encoding::<f64>(12, 4);
        for i in 0..12 {
            for j in 0..4 {
                let acc = b[(0, j)] + tags[(i, 0)] * w[(0, j)] + tags[(i, 1)] * w[(1, j)] + pe[(i, j)];
                assert!((out[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inject_identity_zero_and_product_oracle() {
        let f = toy_mat(2, 3, 1.0);
        let ones = Mat::from_elem((2, 3), 1.0);
        assert_eq!(inject_tags(&f, &ones).unwrap(), f);
        let zeros = Mat::zeros((2, 3));
        assert!(inject_tags(&f, &zeros).unwrap().iter().all(|v| *v == 0.0));
        let t = toy_mat(2, 3, 0.5);
        let out = inject_tags(&f, &t).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((out[(i, j)] - f[(i, j)] * t[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adain_self_style_is_identity() {
        let x = toy_mat(6, 4, 1.4);
        let (out, cache) = adain_forward(&x, &x).unwrap();
        assert!(cache.constant_channels.is_empty());
        assert!((&out - &x).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn adain_zero_variance_style_gives_constant_channels() {
        let x = toy_mat(6, 3, 1.0);
        let mut style = Mat::zeros((6, 3));
        for c in 0..3 {
            style.column_mut(c).fill(c as f64 + 0.5);
        }
        let (out, _) = adain_forward(&x, &style).unwrap();
        for c in 0..3 {
            for t in 0..6 {
                assert!((out[(t, c)] - (c as f64 + 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adain_matches_manual_arithmetic_on_4x2() {
        let x = ndarray::array![[1.0, 0.0], [2.0, 1.0], [3.0, 0.0], [4.0, 1.0]];
        let style = ndarray::array![[0.0, 2.0], [2.0, 4.0], [4.0, 2.0], [6.0, 4.0]];
        let (out, _) = adain_forward(&x, &style).unwrap();
        // channel 0: mu_x 2.5, sigma_x sqrt(1.25); mu_s 3, sigma_s sqrt(5)
        let sx = 1.25f64.sqrt();
        let ss = 5.0f64.sqrt();
        for (t, &xv) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let expect = (xv - 2.5) / sx * ss + 3.0;
            assert!((out[(t, 0)] - expect).abs() < 1e-12);
        }
        // channel 1: mu_x 0.5, sigma_x 0.5; mu_s 3, sigma_s 1
        for (t, &xv) in [0.0, 1.0, 0.0, 1.0].iter().enumerate() {
            let expect = (xv - 0.5) / 0.5 * 1.0 + 3.0;
            assert!((out[(t, 1)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn adain_output_statistics_match_style() {
        let x = toy_mat(32, 5, 1.7);
        let style = toy_mat(32, 5, 0.6).mapv(|v| v + 0.3);
        let (out, _) = adain_forward(&x, &style).unwrap();
        for c in 0..5 {
            let col = out.column(c);
            let sref = style.column(c);
            let mu: f64 = col.sum() / 32.0;
            let mu_s: f64 = sref.sum() / 32.0;
            let var: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 32.0;
            let var_s: f64 = sref.iter().map(|v| (v - mu_s) * (v - mu_s)).sum::<f64>() / 32.0;
            assert!((mu - mu_s).abs() <= 1e-5);
            assert!((var.sqrt() / var_s.sqrt() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn adain_gradients_match_finite_differences() {
        let x = toy_mat(5, 3, 1.2);
        let style = toy_mat(5, 3, 0.7).mapv(|v| v + 0.2);
        let (out, cache) = adain_forward(&x, &style).unwrap();
        let dy = out.mapv(|v| 2.0 * v);
        let (dx, dstyle) = adain_backward(&cache, &dy);

        let report = check_input_grad(&x, &dx, 1e-6, |xp| {
            let (y, _) = adain_forward(xp, &style).unwrap();
            y.iter().map(|v| v * v).sum()
        });
        assert!(report.ok(1e-4), "dx: {:?}", report.worst);
        let report = check_input_grad(&style, &dstyle, 1e-6, |sp| {
            let (y, _) = adain_forward(&x, sp).unwrap();
            y.iter().map(|v| v * v).sum()
        });
        assert!(report.ok(1e-4), "dstyle: {:?}", report.worst);
    }

    #[test]
    fn control_layer_zeroed_value_projection_reduces_to_bias_path() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let ec = EmotionalControl::new(&mut ps, "ec", 4, 1, &mut rng).unwrap();
        ps.get_mut(ec.attn.wv.w).fill(0.0);
        ps.get_mut(ec.attn.wv.b).fill(0.0);
        ps.get_mut(ec.attn.wo.b).fill(0.0);
        let f = toy_mat(4, 4, 1.0);
        let cond = toy_mat(4, 4, 0.5);
        let tags = toy_mat(4, 4, 0.3);
        let (out, cache) = ec.forward(&ps, &f, &cond, &tags).unwrap();
        // value path zeroed -> F_emo = 0 -> modulation = conv bias rows
        assert!(cache.f_emo.iter().all(|v| v.abs() < 1e-12));
        let bias_rows = Mat::from_shape_fn((4, 4), |(_, j)| ps.get(ec.conv.b)[(0, j)]);
        let (ada, _) = adain_forward(&f, &bias_rows).unwrap();
        let expect = ada + &f;
        assert!((&out - &expect).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn control_layer_attention_spans_both_inputs() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ec = EmotionalControl::new(&mut ps, "ec", 8, 2, &mut rng).unwrap();
        let l = 5;
        let f = toy_mat(l, 8, 1.0);
        let cond = toy_mat(l, 8, 0.8);
        let tags = toy_mat(l, 8, 0.4);
        let (_, cache) = ec.forward(&ps, &f, &cond, &tags).unwrap();
        for attn in &cache.attn.attn {
            assert_eq!(attn.dim(), (l, 2 * l));
            for row in attn.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn control_layer_micro_forward_matches_composed_oracle() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let ec = EmotionalControl::new(&mut ps, "ec", 2, 1, &mut rng).unwrap();
        let f = ndarray::array![[0.4, -0.2], [0.1, 0.9]];
        let cond = ndarray::array![[0.3, 0.5], [-0.7, 0.2]];
        let tags = ndarray::array![[0.9, -0.9], [0.1, 0.6]];
        let (out, _) = ec.forward(&ps, &f, &cond, &tags).unwrap();

        // step-by-step recomputation through the published sub-operations
        let kv = ndarray::concatenate(ndarray::Axis(0), &[f.view(), cond.view()]).unwrap();
        let (f_emo, _) = ec.attn.forward(&ps, &tags, &kv);
        let modulation = ec.conv.forward(&ps, &f_emo);
        let (ada, _) = adain_forward(&f, &modulation).unwrap();
        let expect = ada + &f;
        assert!((&out - &expect).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn control_layer_gradients_match_finite_differences() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let ec = EmotionalControl::new(&mut ps, "ec", 4, 2, &mut rng).unwrap();
        let f = toy_mat(4, 4, 1.0);
        let cond = toy_mat(4, 4, 0.6);
        let tags = toy_mat(4, 4, 0.5);

        let loss = |ps: &ParamStore<f64>| -> f64 {
            let (y, _) = ec.forward(ps, &f, &cond, &tags).unwrap();
            y.iter().map(|v| v * v).sum()
        };
        let (y, cache) = ec.forward(&ps, &f, &cond, &tags).unwrap();
        let dy = y.mapv(|v| 2.0 * v);
        let mut g = Grads::zeros_like(&ps);
        let (df, dcond, dtags) = ec.backward(&ps, &cache, &dy, &mut g);

        let ids: Vec<_> = ps.ids().collect();
        let report = check_param_grads(&mut ps, &g, &ids, 1e-6, |ps| loss(ps));
        assert!(report.ok(1e-4), "params: {:?}", report.worst);

        for (which, x, dx) in [("f", &f, &df), ("cond", &cond, &dcond), ("tags", &tags, &dtags)] {
            let report = check_input_grad(x, dx, 1e-6, |xp| {
                let (a, b, c) = match which {
                    "f" => (xp, &cond, &tags),
                    "cond" => (&f, xp, &tags),
                    _ => (&f, &cond, xp),
                };
                let (y, _) = ec.forward(&ps, a, b, c).unwrap();
                y.iter().map(|v| v * v).sum()
            });
            assert!(report.ok(1e-4), "{which}: {:?}", report.worst);
        }
    }

    #[test]
    fn opposite_tags_change_the_output() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let ec = EmotionalControl::new(&mut ps, "ec", 8, 2, &mut rng).unwrap();
        let f = toy_mat(6, 8, 1.0);
        let cond = toy_mat(6, 8, 0.7);
        let mut pos = Mat::zeros((6, 8));
        pos.fill(0.9);
        let mut neg = Mat::zeros((6, 8));
        neg.fill(-0.9);
        let (out_pos, _) = ec.forward(&ps, &f, &cond, &pos).unwrap();
        let (out_neg, _) = ec.forward(&ps, &f, &cond, &neg).unwrap();
        let max_diff = (&out_pos - &out_neg)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.0);
    }
}
