use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown submap id {0}")]
    UnknownSubmap(usize),

    #[error("unknown world '{0}'")]
    UnknownWorld(String),

    #[error("control out of bounds: {0}")]
    ControlOutOfBounds(String),

    #[error("covariance is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
