use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::Matrix;

/// Random transformation of a feature vector: additive Gaussian jitter, a
/// per-sample multiplicative scale, then random feature zeroing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub jitter_stddev: f64,
    pub scale_range: [f64; 2],
    pub dropout_fraction: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            jitter_stddev: 0.1,
            scale_range: [0.9, 1.1],
            dropout_fraction: 0.05,
        }
    }
}

impl AugmentSpec {
    pub const IDENTITY: AugmentSpec = AugmentSpec {
        jitter_stddev: 0.0,
        scale_range: [1.0, 1.0],
        dropout_fraction: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(self.jitter_stddev >= 0.0) || !self.jitter_stddev.is_finite() {
            return Err(invalid("jitter stddev must be a finite non-negative number"));
        }
        if !(lo > 0.0 && lo <= 1.0 && 1.0 <= hi && hi.is_finite()) {
            return Err(invalid(format!(
                "scale range [{lo}, {hi}] must satisfy 0 < lo <= 1 <= hi"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(invalid("dropout fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Applies jitter, scaling and dropout in that order. The identity spec
/// returns the input unchanged and draws nothing from `rng`.
pub fn augment<R: Rng + ?Sized>(sample: &[f64], spec: &AugmentSpec, rng: &mut R) -> Vec<f64> {
    let mut out = sample.to_vec();
    if spec.jitter_stddev > 0.0 {
        let normal = Normal::new(0.0, spec.jitter_stddev).expect("validated stddev");
        out.iter_mut().for_each(|x| *x += normal.sample(rng));
    }
    let [lo, hi] = spec.scale_range;
    if hi > lo {
        let scale = rng.random_range(lo..=hi);
        out.iter_mut().for_each(|x| *x *= scale);
    }
    if spec.dropout_fraction > 0.0 {
        for x in out.iter_mut() {
            if rng.random::<f64>() < spec.dropout_fraction {
                *x = 0.0;
            }
        }
    }
    out
}

/// Augments every row independently.
pub fn augment_batch<R: Rng + ?Sized>(batch: &Matrix, spec: &AugmentSpec, rng: &mut R) -> Matrix {
    let mut out = batch.clone();
    for i in 0..out.rows() {
        let row = augment(batch.row(i), spec, rng);
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}
