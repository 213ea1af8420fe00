use thiserror::Error;

#[derive(Debug, Error)]
pub enum BivitError {
    #[error("value {value} at index {index} is not a valid {expected} binary value")]
    InvalidBinaryValue {
        value: f64,
        index: usize,
        expected: &'static str,
    },
    #[error("dimension mismatch: {left} vs {right} ({context})")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },
    #[error("encoding mismatch: {context}")]
    EncodingMismatch { context: &'static str },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("problem too large: n = {n}, limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("invalid beta {0}: must lie in (0, 1)")]
    InvalidBeta(f64),
    #[error("invalid config: {0}")]
    ConfigError(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("format error at offset {offset}: {message}")]
    FormatError { offset: u64, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BivitError>;
