//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A config file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Corpus/clip data on disk is missing, unreadable, or malformed.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A checkpoint file is corrupt or from an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss; the run must abort.
    #[error("non-finite loss at step {step}: {details}")]
    NonFinite { step: u64, details: String },

    /// Classifier training ran out of budget before reaching its target.
    #[error("classifier did not converge: {0}")]
    Convergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
