//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed inputs: dimension mismatches, out-of-range indices,
    /// unnormalized distributions, bad configuration values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A computation produced or encountered non-finite values.
    #[error("numeric error at step {step}: {message}")]
    Numeric { step: usize, message: String },

    /// An enumeration would exceed the configured budget.
    #[error("capacity exceeded: {required} paths > budget {budget}")]
    Capacity { required: f64, budget: f64 },

    /// The requested operation is not defined for this input combination.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A sampled estimate could not be formed (e.g. no rollout reached t).
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Configuration file problems (unknown keys, parse failures).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// Process exit code for the CLI: 1 check failure, 2 config, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Unsupported(_) => 2,
            Error::Numeric { .. } | Error::Capacity { .. } | Error::Estimation(_) => 3,
            Error::Io(_) => 3,
        }
    }
}
