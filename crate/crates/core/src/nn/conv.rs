//! Temporal 1-D convolution (kernel 3, same padding) over [L, channels] data.

use ndarray::s;
use rand::Rng;
use std::ops::AddAssign;

use crate::nn::real::Real;
use crate::nn::store::{gauss, Grads, Mat, ParamId, ParamStore};

/// Kernel taps are stored stacked: w has shape [3 * c_in, c_out] with tap k
/// occupying rows k*c_in .. (k+1)*c_in (k = 0 reads x[t-1], 1 reads x[t],
/// 2 reads x[t+1]).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn new<F: Real, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (3 * c_in + c_out) as f64).sqrt();
        let w = ps.add(format!("{name}.w"), gauss(rng, 3 * c_in, c_out, std));
        let b = ps.add(format!("{name}.b"), Mat::zeros((1, c_out)));
        Conv1d { w, b, c_in, c_out }
    }

    fn tap<'a, F: Real>(&self, ps: &'a ParamStore<F>, k: usize) -> ndarray::ArrayView2<'a, F> {
        ps.get(self.w)
            .slice(s![k * self.c_in..(k + 1) * self.c_in, ..])
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, x: &Mat<F>) -> Mat<F> {
        let l = x.nrows();
        debug_assert_eq!(x.ncols(), self.c_in);
        let mut y = Mat::zeros((l, self.c_out));
        y += ps.get(self.b);
        y += &x.dot(&self.tap(ps, 1));
        if l > 1 {
            // y[t] += x[t-1] w0  and  y[t] += x[t+1] w2, zero-padded ends
            let prev = x.slice(s![..l - 1, ..]).dot(&self.tap(ps, 0));
            y.slice_mut(s![1.., ..]).add_assign(&prev);
            let next = x.slice(s![1.., ..]).dot(&self.tap(ps, 2));
            y.slice_mut(s![..l - 1, ..]).add_assign(&next);
        }
        y
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: &Mat<F>,
        dy: &Mat<F>,
        g: &mut Grads<F>,
    ) -> Mat<F> {
        let l = x.nrows();
        let mut dw = Mat::zeros((3 * self.c_in, self.c_out));
        dw.slice_mut(s![self.c_in..2 * self.c_in, ..])
            .assign(&x.t().dot(dy));
        if l > 1 {
            dw.slice_mut(s![..self.c_in, ..])
                .assign(&x.slice(s![..l - 1, ..]).t().dot(&dy.slice(s![1.., ..])));
            dw.slice_mut(s![2 * self.c_in.., ..])
                .assign(&x.slice(s![1.., ..]).t().dot(&dy.slice(s![..l - 1, ..])));
        }
        g.accum(self.w, &dw);
        let db = dy.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
        g.accum(self.b, &db);

        let mut dx = dy.dot(&self.tap(ps, 1).t());
        if l > 1 {
            let from_next = dy.slice(s![1.., ..]).dot(&self.tap(ps, 0).t());
            dx.slice_mut(s![..l - 1, ..]).add_assign(&from_next);
            let from_prev = dy.slice(s![..l - 1, ..]).dot(&self.tap(ps, 2).t());
            dx.slice_mut(s![1.., ..]).add_assign(&from_prev);
        }
        dx
    }
}
