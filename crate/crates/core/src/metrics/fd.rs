//! Fréchet distance between frame distributions.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianStats {
    /// Population mean/covariance of row vectors.
    pub fn fit(frames: &ArrayView2<'_, f64>) -> Result<Self> {
        let n = frames.nrows();
        if n == 0 {
            return Err(Error::Domain("cannot fit Gaussian to zero frames".into()));
        }
        let d = frames.ncols();
        let mean = frames.sum_axis(ndarray::Axis(0)) / n as f64;
        let mut cov = Array2::zeros((d, d));
        for row in frames.rows() {
            for i in 0..d {
                let ci = row[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += ci * (row[j] - mean[j]);
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] * inv_n;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_symmetry(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.dim() != (d, d) {
            return Err(Error::shape(format!(
                "covariance {:?} does not match mean length {d}",
                self.cov.dim()
            )));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Domain(format!(
                        "covariance asymmetric at ({i}, {j}) beyond {SYMMETRY_TOL}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full type invariant: symmetry within 1e-8 and eigenvalues >= -1e-8.
    pub fn validate(&self) -> Result<()> {
        self.check_symmetry()?;
        let eig = SymmetricEigen::new(to_nalgebra(&self.cov));
        if let Some(min) = eig
            .eigenvalues
            .iter()
            .cloned()
            .reduce(f64::min)
            .filter(|&m| m < -1e-8)
        {
            return Err(Error::Domain(format!(
                "covariance is not PSD: smallest eigenvalue {min}"
            )));
        }
        Ok(())
    }
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// are clipped at zero.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut scaled = eig.eigenvectors.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        col *= sqrt_vals[c];
    }
    &scaled * eig.eigenvectors.transpose()
}

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2).
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    a.check_symmetry()?;
    b.check_symmetry()?;

    let mean_term: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let cov_a = to_nalgebra(&a.cov);
    let cov_b = to_nalgebra(&b.cov);
    let sqrt_b = sqrtm_psd(&cov_b);
    let inner = &sqrt_b * &cov_a * &sqrt_b;
    let inner_sym = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner_sym);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();

    let trace_a: f64 = (0..a.dim()).map(|i| a.cov[(i, i)]).sum();
    let trace_b: f64 = (0..b.dim()).map(|i| b.cov[(i, i)]).sum();
    Ok((mean_term + trace_a + trace_b - 2.0 * tr_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_stats_give_zero() {
        let frames = Array2::from_shape_fn((200, 5), |(i, j)| ((i * 3 + j) as f64 * 0.13).sin());
        let a = GaussianStats::fit(&frames.view()).unwrap();
        let b = GaussianStats::fit(&frames.view()).unwrap();
        let fd = frechet_distance(&a, &b).unwrap();
        assert!(fd <= 1e-8, "fd {fd}");
    }

    #[test]
    fn unit_covariances_and_unit_mean_shift_give_one() {
        let eye = Array2::eye(4);
        let a = GaussianStats {
            mean: Array1::zeros(4),
            cov: eye.clone(),
        };
        let mut mean_b = Array1::zeros(4);
        mean_b[2] = 1.0;
        let b = GaussianStats {
            mean: mean_b,
            cov: eye,
        };
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 1.0).abs() < 1e-10, "fd {fd}");
    }

    #[test]
    fn sampled_diagonal_gaussians_match_closed_form_within_5_percent() {
        // diagonal covariances make the trace term hand-computable:
        // FD = |mu_a - mu_b|^2 + sum (sqrt(sa_i) - sqrt(sb_i))^2
        let mu_a = [0.0, 0.0, 0.0];
        let mu_b = [1.0, 0.5, -0.3];
        let var_a = [1.0f64, 2.0, 0.5];
        let var_b = [2.0f64, 1.0, 1.5];
        let closed_form: f64 = mu_a
            .iter()
            .zip(mu_b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            + var_a
                .iter()
                .zip(var_b.iter())
                .map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
                .sum::<f64>();

        let n = 100_000;
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let draw = |mu: &[f64; 3], var: &[f64; 3], rng: &mut ChaCha20Rng| {
            Array2::from_shape_fn((n, 3), |(_, j)| {
                let z: f64 = StandardNormal.sample(rng);
                mu[j] + z * var[j].sqrt()
            })
        };
        let fa = draw(&mu_a, &var_a, &mut rng);
        let fb = draw(&mu_b, &var_b, &mut rng);
        let a = GaussianStats::fit(&fa.view()).unwrap();
        let b = GaussianStats::fit(&fb.view()).unwrap();
        let fd = frechet_distance(&a, &b).unwrap();
        let rel = (fd - closed_form).abs() / closed_form;
        assert!(rel < 0.05, "fd {fd} vs closed form {closed_form} (rel {rel})");
    }

    #[test]
    fn symmetry_and_non_negativity_on_random_psd_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = 6;
            let raw_a = Array2::from_shape_fn((d + 4, d), |_| rng.gen_range(-1.0..1.0));
            let raw_b = Array2::from_shape_fn((d + 4, d), |_| rng.gen_range(-1.0..1.0));
            let a = GaussianStats::fit(&raw_a.view()).unwrap();
            let b = GaussianStats::fit(&raw_b.view()).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!(ab >= 0.0 && ba >= 0.0);
            assert!((ab - ba).abs() <= 1e-6 * (1.0 + ab.abs()), "{ab} vs {ba}");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = GaussianStats {
            mean: Array1::zeros(3),
            cov: Array2::eye(3),
        };
        let b = GaussianStats {
            mean: Array1::zeros(4),
            cov: Array2::eye(4),
        };
        assert!(frechet_distance(&a, &b).is_err());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let a = GaussianStats {
            mean: Array1::zeros(2),
            cov: array![[1.0, 0.5], [0.2, 1.0]],
        };
        let b = GaussianStats {
            mean: Array1::zeros(2),
            cov: Array2::eye(2),
        };
        assert!(frechet_distance(&a, &b).is_err());
    }
}
