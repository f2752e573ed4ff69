//! Flat parameter storage.
//!
//! Layers hold [`ParamId`] handles instead of owning tensors. Keeping every
//! tensor in one indexed table gives the optimizer, the checkpoint writer and
//! the gradient checker a single deterministic enumeration order (the order
//! of registration), and lets gradients live in a parallel table with the
//! same layout.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::real::Real;

pub type Mat<F> = Array2<F>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Mat<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<F>) -> ParamId {
        let id = ParamId(self.values.len());
        self.names.push(name.into());
        self.values.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<F>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Replace a tensor by name; used when loading checkpoints.
    pub fn set_by_name(&mut self, name: &str, value: Mat<F>) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if self.values[idx].dim() != value.dim() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, checkpoint carries {:?}",
                self.values[idx].dim(),
                value.dim()
            )));
        }
        self.values[idx] = value;
        Ok(())
    }
}

/// Gradient table mirroring a [`ParamStore`] layout.
pub struct Grads<F> {
    values: Vec<Mat<F>>,
}

impl<F: Real> Grads<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Grads {
            values: store
                .values
                .iter()
                .map(|m| Mat::zeros(m.dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.values[id.0]
    }

    pub fn accum(&mut self, id: ParamId, delta: &Mat<F>) {
        self.values[id.0] += delta;
    }

    pub fn zero(&mut self) {
        for m in &mut self.values {
            m.fill(F::zero());
        }
    }

    pub fn scale(&mut self, s: F) {
        for m in &mut self.values {
            m.mapv_inplace(|x| x * s);
        }
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mat<F>> {
        self.values.iter()
    }
}

/// Xavier/Glorot normal initialization.
pub fn xavier<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat<F> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| F::from_f64(dist.sample(rng)))
}

/// Gaussian initialization with explicit standard deviation.
pub fn gauss<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat<F> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Mat::from_shape_fn((rows, cols), |_| F::from_f64(dist.sample(rng)))
}

pub fn zeros<F: Real>(rows: usize, cols: usize) -> Mat<F> {
    Mat::zeros((rows, cols))
}
