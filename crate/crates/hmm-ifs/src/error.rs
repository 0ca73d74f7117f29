//! Error type shared across the crate.
//!
//! Errors split into two categories that the CLI maps onto exit codes:
//! validation errors (bad configs, malformed inputs, violated
//! preconditions) and numerical failures (zero-likelihood observations,
//! linear-space underflow, non-convergence).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("reducible chain: {0}")]
    ReducibleChain(String),

    #[error("impossible observation at step {step}: zero likelihood in every state")]
    ImpossibleObservation { step: usize },

    #[error("chain too long for linear-space evaluation (underflow to zero at step {step})")]
    LinearUnderflow { step: usize },

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    /// CLI exit code: 1 for validation errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::ReducibleChain(_)
            | Error::BudgetExceeded(_)
            | Error::Io(_)
            | Error::Parse { .. } => 1,
            Error::ImpossibleObservation { .. }
            | Error::LinearUnderflow { .. }
            | Error::Optimization(_)
            | Error::CheckFailed(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
