//! Central finite-difference verification helpers.
//!
//! These only ever call user-supplied loss closures (forward passes), so they
//! stay independent of every backward implementation they are used to check.

use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamId, ParamStore};

/// Relative-error comparison used across the gradient suite:
/// |a - b| / max(1, |a|, |b|) <= tol.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1.0_f64.max(a.abs()).max(b.abs())
}

pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn update_report(report: &mut GradCheckReport, fd: f64, analytic: f64, label: String) {
    report.checked += 1;
    let rel = (fd - analytic).abs() / 1.0_f64.max(fd.abs()).max(analytic.abs());
    if rel > report.max_rel_err {
        report.max_rel_err = rel;
        report.worst = Some(format!("{label}: fd {fd:.9e} vs analytic {analytic:.9e}"));
    }
}

/// Checks analytic parameter gradients against central differences.
/// `param_ids` selects which tensors to perturb; every element of each is
/// checked. The loss closure must be a pure forward pass.
pub fn check_param_grads<F, L>(
    store: &mut ParamStore<F>,
    grads: &Grads<F>,
    param_ids: &[ParamId],
    eps: f64,
    mut loss: L,
) -> GradCheckReport
where
    F: Real,
    L: FnMut(&ParamStore<F>) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for &id in param_ids {
        let dims = store.get(id).dim();
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let orig = store.get(id)[(i, j)];
                store.get_mut(id)[(i, j)] = orig + F::from_f64(eps);
                let lp = loss(store);
                store.get_mut(id)[(i, j)] = orig - F::from_f64(eps);
                let lm = loss(store);
                store.get_mut(id)[(i, j)] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let analytic = grads.get(id)[(i, j)].as_f64();
                let label = format!("{}[{i},{j}]", store.name(id));
                update_report(&mut report, fd, analytic, label);
            }
        }
    }
    report
}

/// Checks an analytic input gradient against central differences.
pub fn check_input_grad<F, L>(
    x: &Mat<F>,
    dx: &Mat<F>,
    eps: f64,
    mut loss: L,
) -> GradCheckReport
where
    F: Real,
    L: FnMut(&Mat<F>) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut xp = x.clone();
            xp[(i, j)] += F::from_f64(eps);
            let lp = loss(&xp);
            let mut xm = x.clone();
            xm[(i, j)] -= F::from_f64(eps);
            let lm = loss(&xm);
            let fd = (lp - lm) / (2.0 * eps);
            update_report(&mut report, fd, dx[(i, j)].as_f64(), format!("input[{i},{j}]"));
        }
    }
    report
}
