//! Layer normalization (per token, pre-affine mean 0 / variance 1).

use rand::Rng;

use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamId, ParamStore};

const LN_EPS: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub d: usize,
}

pub struct LayerNormCache<F> {
    /// Normalized activations before the affine map.
    pub xhat: Mat<F>,
    pub inv_std: Vec<F>,
}

impl LayerNorm {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d: usize,
        _rng: &mut R,
    ) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Mat::from_elem((1, d), F::one()));
        let beta = ps.add(format!("{name}.beta"), Mat::zeros((1, d)));
        LayerNorm { gamma, beta, d }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Mat<F>) -> (Mat<F>, LayerNormCache<F>) {
        let n = x.nrows();
        let d = x.ncols();
        debug_assert_eq!(d, self.d);
        let eps = F::from_f64(LN_EPS);
        let inv_d = F::from_usize(d).recip();

        let mut xhat = Mat::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().cloned().sum::<F>() * inv_d;
            let var = row
                .iter()
                .map(|&v| {
                    let c = v - mean;
                    c * c
                })
                .sum::<F>()
                * inv_d;
            let istd = (var + eps).sqrt().recip();
            inv_std.push(istd);
            for j in 0..d {
                xhat[(i, j)] = (row[j] - mean) * istd;
            }
        }
        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let y = &xhat * gamma + beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &LayerNormCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> Mat<F> {
        let (n, d) = cache.xhat.dim();
        let inv_d = F::from_usize(d).recip();
        let gamma = ps.get(self.gamma);

        let dgamma = (&cache.xhat * dy)
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0));
        g.accum(self.gamma, &dgamma);
        let dbeta = dy.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        g.accum(self.beta, &dbeta);

        let mut dx = Mat::zeros((n, d));
        for i in 0..n {
            // dxhat = dy * gamma
            let mut mean_dxhat = F::zero();
            let mut mean_dxhat_xhat = F::zero();
            for j in 0..d {
                let dxh = dy[(i, j)] * gamma[(0, j)];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * cache.xhat[(i, j)];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            let istd = cache.inv_std[i];
            for j in 0..d {
                let dxh = dy[(i, j)] * gamma[(0, j)];
                dx[(i, j)] = istd * (dxh - mean_dxhat - cache.xhat[(i, j)] * mean_dxhat_xhat);
            }
        }
        dx
    }
}
