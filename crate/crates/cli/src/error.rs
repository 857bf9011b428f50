use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure categories, each with its own process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
}

impl CliError {
    /// 2 is left to argument-parsing failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Data(_) => 5,
            CliError::Pipeline(_) => 6,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

impl From<ssnll_core::Error> for CliError {
    fn from(e: ssnll_core::Error) -> Self {
        use ssnll_core::Error as E;
        match e {
            E::Format(_) | E::Unsupported(_) | E::Io(_) => CliError::Data(e.to_string()),
            E::Shape(_) | E::InvalidInput(_) | E::InvalidState(_) => CliError::Pipeline(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
