use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("matrix not symmetric (max deviation {0:e})")]
    NotSymmetric(f64),
    #[error("matrix not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("memory budget exceeded: {0}")]
    Budget(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
