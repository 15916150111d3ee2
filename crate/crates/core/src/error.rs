use thiserror::Error;

/// Errors raised by kernel construction, Gram assembly and the RKHS calculus.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} sites")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Gram size {size} exceeds the configured cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("kernel is not square-valued ({rows}x{cols}); Gram assembly needs a B(H)-valued kernel")]
    NotSquare { rows: usize, cols: usize },

    #[error("kernel cannot be normalized: K(s,s) has eigenvalue {min_eig:e} below 1e-12 * {max_eig:e}")]
    NotNormalizable { min_eig: f64, max_eig: f64 },

    #[error("Gram matrix is not positive semi-definite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("indefinite: Cholesky failed for every jitter up to {max_jitter:e}")]
    Indefinite { max_jitter: f64 },

    #[error("elements belong to different contexts")]
    ContextMismatch,

    #[error("empty expansion: no eigenvalue above {threshold:e}")]
    EmptyExpansion { threshold: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
