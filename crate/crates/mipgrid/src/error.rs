//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or command-line usage (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/kernel shape disagreement between components.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Dense-oracle element budget exceeded.
    #[error("element budget exceeded: {0}")]
    Budget(String),

    /// Non-finite value where the pipeline requires finite numbers.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 2 for usage/config problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArg(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
