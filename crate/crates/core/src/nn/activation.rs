//! Elementwise nonlinearities and softmax, each paired with its backward.

use crate::nn::real::Real;
use crate::nn::store::Mat;

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu<F: Real>(x: &Mat<F>) -> Mat<F> {
    x.mapv(|v| {
        let v = v.as_f64();
        let inner = GELU_C * (v + GELU_A * v * v * v);
        F::from_f64(0.5 * v * (1.0 + inner.tanh()))
    })
}

/// d gelu(x) / dx evaluated at the forward input.
pub fn gelu_backward<F: Real>(x: &Mat<F>, dy: &Mat<F>) -> Mat<F> {
    let mut dx = x.clone();
    dx.zip_mut_with(dy, |xv, &dyv| {
        let v = xv.as_f64();
        let u = GELU_C * (v + GELU_A * v * v * v);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        let grad = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        *xv = F::from_f64(grad) * dyv;
    });
    dx
}

pub fn tanh<F: Real>(x: &Mat<F>) -> Mat<F> {
    x.mapv(|v| v.tanh())
}

/// Backward through tanh given the forward OUTPUT y = tanh(x).
pub fn tanh_backward_from_output<F: Real>(y: &Mat<F>, dy: &Mat<F>) -> Mat<F> {
    let mut dx = y.clone();
    dx.zip_mut_with(dy, |yv, &dyv| {
        *yv = (F::one() - *yv * *yv) * dyv;
    });
    dx
}

pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_rows<F: Real>(x: &Mat<F>) -> Mat<F> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().cloned().sum::<F>();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward through row-wise softmax given the forward OUTPUT `y`.
/// dx = y * (dy - rowsum(dy * y)).
pub fn softmax_rows_backward<F: Real>(y: &Mat<F>, dy: &Mat<F>) -> Mat<F> {
    let mut dx = Mat::zeros(y.dim());
    for i in 0..y.nrows() {
        let yr = y.row(i);
        let dr = dy.row(i);
        let dot = yr
            .iter()
            .zip(dr.iter())
            .map(|(&a, &b)| a * b)
            .sum::<F>();
        for j in 0..y.ncols() {
            dx[(i, j)] = yr[j] * (dr[j] - dot);
        }
    }
    dx
}
