//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not satisfy an operation's shape contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// A hyperparameter combination violates a structural constraint.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value showed up where the math requires finite input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was invoked out of order (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("training error at step {step}: {message}")]
    Training { step: usize, message: String },

    /// Malformed CSTF file, checkpoint manifest, or config text.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
