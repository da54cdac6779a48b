use std::io;

use thiserror::Error;

/// Errors raised by the estimator, the oracles and the CLI plumbing.
#[derive(Debug, Error)]
pub enum ReachError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch: expected {expected}, got {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ReachError {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReachError::Input(_)
            | ReachError::Dimension { .. }
            | ReachError::Config(_)
            | ReachError::Contract(_)
            | ReachError::Unsupported(_) => 2,
            ReachError::Numerical(_) => 3,
            ReachError::Io(_) => 4,
            ReachError::Csv(e) if e.is_io_error() => 4,
            ReachError::Csv(_) => 2,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize, context: &'static str) -> Self {
        ReachError::Dimension {
            expected,
            found,
            context,
        }
    }
}

pub type Result<T> = std::result::Result<T, ReachError>;
