//! Dataset containers, synthetic domain-shift generation, IDX ingestion,
//! stochastic augmentation and balanced batch sampling.

mod augment;
mod dataset;
pub mod idx;
mod sampler;
mod synthetic;

pub use augment::{augment, augment_batch, AugmentSpec};
pub use dataset::LabeledDataset;
pub use sampler::BalancedBatches;
pub use synthetic::{generate_shifted_gaussians, ShiftSpec};
