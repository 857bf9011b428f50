//! Config-driven experiment driver: pre-training, adaptation runs, split-ratio
//! sweeps, embedding export and checkpoint evaluation.

pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
