//! AdamW: adaptive moments with decoupled weight decay.

use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

pub struct AdamW<F> {
    cfg: AdamWConfig,
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
    step: u64,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, cfg: AdamWConfig) -> Self {
        let m = store.iter().map(|(_, t)| Mat::zeros(t.dim())).collect();
        let v = store.iter().map(|(_, t)| Mat::zeros(t.dim())).collect();
        AdamW {
            cfg,
            m,
            v,
            step: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// One update over every parameter, in registration order.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) {
        self.step += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        let wd = F::from_f64(self.cfg.weight_decay);
        let bc1 = F::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let bc2 = F::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));

        for idx in 0..store.len() {
            let id = crate::nn::store::ParamId(idx);
            let grad = grads.get(id);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(grad).for_each(|mv, &gv| {
                *mv = b1 * *mv + (one - b1) * gv;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|vv, &gv| {
                *vv = b2 * *vv + (one - b2) * gv * gv;
            });
            let value = store.get_mut(id);
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mv, &vv| {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *p = *p - lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
                });
        }
    }
}
