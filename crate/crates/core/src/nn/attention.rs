//! Scaled dot-product multi-head attention (self- or cross-) with explicit
//! backward. Queries come from `q_in`, keys and values from `kv_in`.

use ndarray::s;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::activation::{softmax_rows, softmax_rows_backward};
use crate::nn::linear::Linear;
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

pub struct MhaCache<F> {
    pub q_in: Mat<F>,
    pub kv_in: Mat<F>,
    pub q: Mat<F>,
    pub k: Mat<F>,
    pub v: Mat<F>,
    /// Per-head attention weights, each row a probability distribution.
    pub attn: Vec<Mat<F>>,
    pub ctx: Mat<F>,
}

impl MultiHeadAttention {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::config(format!(
                "d_model {d_model} must be divisible by n_heads {n_heads}"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(ps, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(ps, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(ps, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(ps, &format!("{name}.wo"), d_model, d_model, rng),
            n_heads,
            d_model,
        })
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        q_in: &Mat<F>,
        kv_in: &Mat<F>,
    ) -> (Mat<F>, MhaCache<F>) {
        let lq = q_in.nrows();
        let dk = self.d_model / self.n_heads;
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());

        let q = self.wq.forward(ps, q_in);
        let k = self.wk.forward(ps, kv_in);
        let v = self.wv.forward(ps, kv_in);

        let mut ctx = Mat::zeros((lq, self.d_model));
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()).mapv(|x| x * scale);
            let a = softmax_rows(&scores);
            let ctx_h = a.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            attn.push(a);
        }
        let y = self.wo.forward(ps, &ctx);
        (
            y,
            MhaCache {
                q_in: q_in.clone(),
                kv_in: kv_in.clone(),
                q,
                k,
                v,
                attn,
                ctx,
            },
        )
    }

    /// Returns (d q_in, d kv_in).
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &MhaCache<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> (Mat<F>, Mat<F>) {
        let dk = self.d_model / self.n_heads;
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());

        let dctx = self.wo.backward(ps, &cache.ctx, dy, g);

        let mut dq = Mat::zeros(cache.q.dim());
        let mut dkm = Mat::zeros(cache.k.dim());
        let mut dvm = Mat::zeros(cache.v.dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let a = &cache.attn[h];
            let dctx_h = dctx.slice(cols);

            let da = dctx_h.dot(&vh.t());
            let dv_h = a.t().dot(&dctx_h);
            let dscores = softmax_rows_backward(a, &da).mapv(|x| x * scale);
            let dq_h = dscores.dot(&kh);
            let dk_h = dscores.t().dot(&qh);

            dq.slice_mut(cols).assign(&dq_h);
            dkm.slice_mut(cols).assign(&dk_h);
            dvm.slice_mut(cols).assign(&dv_h);
        }

        let dq_in = self.wq.backward(ps, &cache.q_in, &dq, g);
        let mut dkv_in = self.wk.backward(ps, &cache.kv_in, &dkm, g);
        dkv_in += &self.wv.backward(ps, &cache.kv_in, &dvm, g);
        (dq_in, dkv_in)
    }
}
