use super::matrix::softmax_rows;
use super::Matrix;
use crate::error::{invalid, shape, Result};

/// Probabilities are clamped here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean and per-sample cross-entropy `-ln p[i][labels[i]]`.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if probs.rows() != labels.len() {
        return Err(shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(invalid("cross-entropy of an empty batch"));
    }
    let mut per_sample = Vec::with_capacity(labels.len());
    for (row, &y) in probs.iter_rows().zip(labels) {
        if y >= row.len() {
            return Err(invalid(format!("label {y} out of range for {} classes", row.len())));
        }
        per_sample.push(-row[y].max(PROB_FLOOR).ln());
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((mean, per_sample))
}

/// Softmax applied to probability rows, flattening the distribution.
pub fn blur(probs: &Matrix) -> Matrix {
    softmax_rows(probs)
}
