use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;
use crate::error::{invalid, Result};

/// Running-statistics momentum used by Train-mode batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// Default variance floor added before the square root.
pub const BN_EPSILON: f64 = 1e-5;

/// Fully connected layer computing `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `in × out` weight matrix.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    /// He-initialized weights with zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Matrix::from_vec(inputs, outputs, data).expect("sized above"),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Batch-normalization parameters together with the population statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    /// Population variance, never negative.
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            epsilon: BN_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let w = self.gamma.len();
        if self.mean.len() != w || self.var.len() != w || self.beta.len() != w {
            return Err(invalid("batch-norm statistics have inconsistent widths"));
        }
        if self.var.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("batch-norm variance must be non-negative"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("batch-norm epsilon must be non-negative"));
        }
        Ok(())
    }

    /// Folds a batch estimate into the running statistics with the given momentum.
    pub(crate) fn absorb(&mut self, batch_mean: &[f64], batch_var: &[f64], momentum: f64) {
        let keep = 1.0 - momentum;
        for (m, &b) in self.mean.iter_mut().zip(batch_mean) {
            *m = keep * *m + momentum * b;
        }
        for (v, &b) in self.var.iter_mut().zip(batch_var) {
            *v = keep * *v + momentum * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Affine(Affine),
    BatchNorm(BatchNormState),
    Relu,
    Softmax,
}

impl Layer {
    /// Output width given an input width, or `None` when the layer is incompatible.
    pub(crate) fn output_width(&self, input: usize) -> Option<usize> {
        match self {
            Layer::Affine(a) => (a.inputs() == input).then_some(a.outputs()),
            Layer::BatchNorm(bn) => (bn.width() == input).then_some(input),
            Layer::Relu | Layer::Softmax => Some(input),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
        }
    }
}
