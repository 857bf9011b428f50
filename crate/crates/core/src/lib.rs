//! Source-free unsupervised domain adaptation for small classifiers.
//!
//! A classifier trained on a source domain is adapted to an unlabeled target
//! domain by treating its target predictions as noisy labels: batch-norm
//! statistics are re-estimated on the target, pseudo labels are denoised by
//! over-clustered k-means, and the model is fine-tuned with a label-wise
//! small-loss split where the cleaner part keeps its pseudo labels and the
//! noisier part is trained on labels produced by an EMA teacher.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod data;
mod error;
pub mod nn;
pub mod split;
pub mod trainer;

pub use error::{Error, Result};
