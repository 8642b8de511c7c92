use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Autodiff tape misuse (double backward, non-scalar loss, ...).
    #[error("tape error: {0}")]
    Tape(String),

    /// A file or byte stream does not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// Run-configuration parse or validation failure.
    #[error("config error: {0}")]
    Config(String),

    /// Training pipeline misuse (missing stage, empty dataset, ...).
    #[error("training error: {0}")]
    Train(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
