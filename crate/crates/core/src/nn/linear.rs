//! Dense layer with hand-written backward pass.

use rand::Rng;

use crate::nn::real::Real;
use crate::nn::store::{xavier, zeros, Grads, Mat, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(rng, din, dout));
        let b = ps.add(format!("{name}.b"), zeros(1, dout));
        Linear { w, b, din, dout }
    }

    /// y = x W + b with x: [n, din].
    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Mat<F>) -> Mat<F> {
        debug_assert_eq!(x.ncols(), self.din);
        let mut y = x.dot(ps.get(self.w));
        y += ps.get(self.b);
        y
    }

    /// Accumulates dW, db and returns dx. `x` is the forward input.
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: &Mat<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> Mat<F> {
        let dw = x.t().dot(dy);
        g.accum(self.w, &dw);
        let db = dy.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        g.accum(self.b, &db);
        dy.dot(&ps.get(self.w).t())
    }
}
