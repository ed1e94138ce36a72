use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shape disagreement. The message names the offending axis.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Malformed or unsupported audio input.
    #[error("audio format: {0}")]
    AudioFormat(String),

    /// Malformed model or feature file (bad magic, version, CRC, truncation).
    #[error("file format: {0}")]
    FileFormat(String),

    /// Backward pass reached an op that has no adjoint.
    #[error("backward: `{0}` has no registered adjoint")]
    NoAdjoint(&'static str),

    /// A component that needs fitting (e.g. global frequency stats) was used unfitted.
    #[error("not fitted: {0}")]
    NotFitted(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Dataset construction or split bookkeeping failed.
    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
