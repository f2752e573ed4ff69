//! Pluggable text-encoder boundary.
//!
//! The built-in toy encoder keeps the artifact self-contained: each
//! whitespace token is mapped to a unit-norm vector drawn from a generator
//! seeded by a stable 64-bit hash of the token, with sinusoidal position
//! encoding added on top. Identical strings therefore produce identical
//! embeddings in every process. A heavier pre-trained encoder can be dropped
//! in behind [`TextEncoder`] without touching the rest of the pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::nn::posenc::position_encoding;
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

/// Token-level embedding sequence, one row per token.
#[derive(Debug, Clone)]
pub struct TokenEmbeddingSeq<F> {
    pub vectors: Mat<F>,
}

impl<F: Real> TokenEmbeddingSeq<F> {
    pub fn n_tokens(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn d_text(&self) -> usize {
        self.vectors.ncols()
    }

    /// Mean-pooled single-row view of the sequence, for callers that want a
    /// sentence-level embedding instead of the full token sequence.
    pub fn pooled(&self) -> Mat<F> {
        let n = F::from_usize(self.n_tokens());
        self.vectors
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0))
            .mapv(|v| v / n)
    }
}

pub trait TextEncoder<F: Real> {
    fn d_text(&self) -> usize;
    fn encode(&self, description: &str) -> Result<TokenEmbeddingSeq<F>>;
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    pub d_text: usize,
}

impl ToyTextEncoder {
    pub fn new(d_text: usize) -> Self {
        ToyTextEncoder { d_text }
    }

    /// Unit-norm token vector before position encoding.
    fn token_vector<F: Real>(&self, token: &str) -> Vec<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
        let raw: Vec<f64> = (0..self.d_text).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.into_iter().map(|v| F::from_f64(v / norm)).collect()
    }
}

impl<F: Real> TextEncoder<F> for ToyTextEncoder {
    fn d_text(&self) -> usize {
        self.d_text
    }

    fn encode(&self, description: &str) -> Result<TokenEmbeddingSeq<F>> {
        let tokens: Vec<&str> = description.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::Domain("text description must be non-empty".into()));
        }
        let mut vectors = Mat::zeros((tokens.len(), self.d_text));
        for (i, token) in tokens.iter().enumerate() {
            let vec = self.token_vector::<F>(token);
            for (j, v) in vec.into_iter().enumerate() {
                vectors[(i, j)] = v;
            }
        }
        let pe = position_encoding::<F>(tokens.len(), self.d_text);
        vectors += &pe;
        Ok(TokenEmbeddingSeq { vectors })
    }
}

/// Toy encode without the position add; exposed for tests of the unit-norm
/// construction.
pub fn toy_token_vectors<F: Real>(encoder: &ToyTextEncoder, description: &str) -> Result<Mat<F>> {
    let tokens: Vec<&str> = description.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::Domain("text description must be non-empty".into()));
    }
    let mut vectors = Mat::zeros((tokens.len(), encoder.d_text));
    for (i, token) in tokens.iter().enumerate() {
        for (j, v) in encoder.token_vector::<F>(token).into_iter().enumerate() {
            vectors[(i, j)] = v;
        }
    }
    Ok(vectors)
}

/// Linear interpolation of token rows along the token axis to `l` rows.
/// Endpoints align: row 0 maps to token 0 and row l-1 to the last token, so
/// n_tokens == l is the identity.
pub fn interpolate_tokens<F: Real>(tokens: &Mat<F>, l: usize) -> Result<Mat<F>> {
    let n = tokens.nrows();
    if n == 0 || l == 0 {
        return Err(Error::shape("interpolation needs at least one row"));
    }
    let d = tokens.ncols();
    let mut out = Mat::zeros((l, d));
    for t in 0..l {
        let tau = if l == 1 || n == 1 {
            0.0
        } else {
            t as f64 * (n - 1) as f64 / (l - 1) as f64
        };
        let lo = tau.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = F::from_f64(tau - lo as f64);
        let one = F::one();
        for j in 0..d {
            out[(t, j)] = tokens[(lo, j)] * (one - frac) + tokens[(hi, j)] * frac;
        }
    }
    Ok(out)
}

/// Token sequence -> frame-aligned text embedding E_text: interpolation to
/// length L followed by a learned projection d_text -> d_model.
#[derive(Debug, Clone)]
pub struct TextResampler {
    pub proj: Linear,
}

pub struct TextResamplerCache<F> {
    pub interp: Mat<F>,
}

impl TextResampler {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_text: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        TextResampler {
            proj: Linear::new(ps, &format!("{name}.proj"), d_text, d_model, rng),
        }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        tokens: &TokenEmbeddingSeq<F>,
        l: usize,
    ) -> Result<(Mat<F>, TextResamplerCache<F>)> {
        let interp = interpolate_tokens(&tokens.vectors, l)?;
        let out = self.proj.forward(ps, &interp);
        Ok((out, TextResamplerCache { interp }))
    }

    /// Token vectors are fixed (hash-derived), so only projection gradients
    /// are accumulated.
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &TextResamplerCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) {
        let _ = self.proj.backward(ps, &cache.interp, dy, g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repeated_token_rows_differ_only_by_position_encoding() {
        let enc = ToyTextEncoder::new(16);
        let seq: TokenEmbeddingSeq<f64> = enc.encode("happy happy").unwrap();
        let pe = position_encoding::<f64>(2, 16);
        for j in 0..16 {
            let without_pe_0 = seq.vectors[(0, j)] - pe[(0, j)];
            let without_pe_1 = seq.vectors[(1, j)] - pe[(1, j)];
            assert!((without_pe_0 - without_pe_1).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = ToyTextEncoder::new(12);
        let a: TokenEmbeddingSeq<f64> = enc.encode("the listener nods calmly").unwrap();
        let b: TokenEmbeddingSeq<f64> = enc.encode("the listener nods calmly").unwrap();
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn token_vectors_are_unit_norm_before_position_add() {
        let enc = ToyTextEncoder::new(24);
        let raw: Mat<f64> = toy_token_vectors(&enc, "a calm but excited shift").unwrap();
        for row in raw.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_description_rejected() {
        let enc = ToyTextEncoder::new(8);
        assert!(<ToyTextEncoder as TextEncoder<f64>>::encode(&enc, "   ").is_err());
    }

    #[test]
    fn single_token_broadcasts_to_identical_rows() {
        let tokens = Mat::from_shape_fn((1, 4), |(_, j)| j as f64 + 1.0);
        let out = interpolate_tokens(&tokens, 10).unwrap();
        assert_eq!(out.nrows(), 10);
        for row in out.rows() {
            for j in 0..4 {
                assert_eq!(row[j], (j + 1) as f64);
            }
        }
    }

    #[test]
    fn equal_lengths_are_interpolation_fixed_points() {
        let tokens = Mat::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.21);
        let out = interpolate_tokens(&tokens, 5).unwrap();
        assert_eq!(out, tokens);
    }

    #[test]
    fn two_tokens_to_three_rows_midpoint() {
        let tokens = Mat::from_shape_fn((2, 3), |(i, j)| if i == 0 { j as f64 } else { 1.0 - j as f64 });
        let out = interpolate_tokens(&tokens, 3).unwrap();
        for j in 0..3 {
            let mid = 0.5 * (tokens[(0, j)] + tokens[(1, j)]);
            assert!((out[(1, j)] - mid).abs() < 1e-12);
        }
    }

    #[test]
    fn resampler_projection_gradient_matches_finite_differences() {
        let mut ps: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let rs = TextResampler::new(&mut ps, "text", 6, 4, &mut rng);
        let enc = ToyTextEncoder::new(6);
        let tokens: TokenEmbeddingSeq<f64> = enc.encode("shifts from calm to excited").unwrap();

        let loss = |ps: &ParamStore<f64>| -> f64 {
            let (y, _) = rs.forward(ps, &tokens, 8).unwrap();
            y.iter().map(|v| v * v).sum()
        };
        let (y, cache) = rs.forward(&ps, &tokens, 8).unwrap();
        let dy = y.mapv(|v| 2.0 * v);
        let mut g = Grads::zeros_like(&ps);
        rs.backward(&ps, &cache, &dy, &mut g);

        let ids: Vec<_> = ps.ids().collect();
        let report =
            crate::nn::gradcheck::check_param_grads(&mut ps, &g, &ids, 1e-6, |ps| loss(ps));
        assert!(report.ok(1e-4), "worst: {:?}", report.worst);
    }
}
