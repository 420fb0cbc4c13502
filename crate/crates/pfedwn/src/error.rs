//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by simulator and training operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed to converge or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced non-finite parameters.
    #[error("divergence at step {step}: parameters became non-finite")]
    Divergence { step: usize },

    /// Interference moments degenerate (zero mean); caller should treat
    /// interference as absent.
    #[error("degenerate interference: mean power is not positive")]
    DegenerateInterference,

    /// Dataset partitioning could not satisfy its constraints.
    #[error("partition error: {0}")]
    Partition(String),

    /// Train/test splitting could not satisfy its constraints.
    #[error("split error: {0}")]
    Split(String),

    /// A file did not match its expected binary format.
    #[error("format error in {file}: {reason}")]
    Format { file: String, reason: String },

    /// Model, dataset, or weight shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A point process produced no nodes, so no topology can be formed.
    #[error("empty point process: no nodes were placed")]
    EmptyPointProcess,

    /// A trace could not be fit (non-positive adjusted values or too short).
    #[error("fit error: {0}")]
    Fit(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
