//! Experiment runner: configuration, orchestration, oracle validation
//! suites, and artifact emission.

// Constraint checks use `!(x > 0.0)` so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;
pub mod runner;
pub mod validate;

use thiserror::Error;

/// Runner-level failures, mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::Numerical(_) => 3,
            RunnerError::Io(_) => 4,
        }
    }

    /// Wraps a library error with the module it arose in.
    pub fn from_module(module: &str, err: pfedwn::Error) -> Self {
        use pfedwn::Error as E;
        let message = format!("[{module}] {err}");
        match err {
            E::Numerical(_) | E::Divergence { .. } | E::Fit(_) | E::DegenerateInterference => {
                RunnerError::Numerical(message)
            }
            E::Io(_) | E::Format { .. } => RunnerError::Io(message),
            _ => RunnerError::Config(message),
        }
    }
}
