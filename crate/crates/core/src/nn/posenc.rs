//! Fixed sinusoidal encodings: per-position rows for sequences and a single
//! row per diffusion timestep. Layout is [sin block | cos block] at geometric
//! frequencies 10000^(-i/(d/2)).

use crate::nn::real::Real;
use crate::nn::store::Mat;

fn fill_row<F: Real>(row: &mut ndarray::ArrayViewMut1<F>, pos: f64, d: usize) {
    let half = d / 2;
    for i in 0..half {
        let freq = (-(i as f64) * (10000f64).ln() / half as f64).exp();
        let angle = pos * freq;
        row[i] = F::from_f64(angle.sin());
        row[half + i] = F::from_f64(angle.cos());
    }
    if d % 2 == 1 {
        row[d - 1] = F::zero();
    }
}

/// [L, d] table of position encodings for frames 0..L-1.
pub fn position_encoding<F: Real>(l: usize, d: usize) -> Mat<F> {
    let mut out = Mat::zeros((l, d));
    for (t, mut row) in out.rows_mut().into_iter().enumerate() {
        fill_row(&mut row, t as f64, d);
    }
    out
}

/// [1, d] sinusoidal encoding of a diffusion timestep.
pub fn timestep_sinusoid<F: Real>(t: usize, d: usize) -> Mat<F> {
    let mut out = Mat::zeros((1, d));
    fill_row(&mut out.row_mut(0), t as f64, d);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_zero_is_zeros_then_ones() {
        let row = timestep_sinusoid::<f64>(0, 8);
        for i in 0..4 {
            assert_eq!(row[(0, i)], 0.0);
            assert_eq!(row[(0, 4 + i)], 1.0);
        }
    }

    #[test]
    fn t_one_matches_closed_form() {
        let d = 4;
        let row = timestep_sinusoid::<f64>(1, d);
        // frequencies 10000^(-i/2) for i = 0, 1
        let f0 = 1.0f64;
        let f1 = (10000f64).powf(-0.5);
        assert!((row[(0, 0)] - f0.sin()).abs() < 1e-15);
        assert!((row[(0, 1)] - f1.sin()).abs() < 1e-15);
        assert!((row[(0, 2)] - f0.cos()).abs() < 1e-15);
        assert!((row[(0, 3)] - f1.cos()).abs() < 1e-15);
    }

    #[test]
    fn distinct_timesteps_are_distinct() {
        let d = 16;
        let t_max = 300;
        let rows: Vec<_> = (0..t_max).map(|t| timestep_sinusoid::<f64>(t, d)).collect();
        for a in 0..t_max {
            for b in (a + 1)..t_max {
                let diff: f64 = (&rows[a] - &rows[b]).iter().map(|v| v.abs()).sum();
                assert!(diff > 1e-9, "t={a} and t={b} collide");
            }
        }
    }
}
