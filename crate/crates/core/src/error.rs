use thiserror::Error;

/// Errors raised anywhere in the postprocessing, coupling and verification stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient training data: {available} cases, need at least {required}")]
    InsufficientData { available: usize, required: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("integration did not converge: {0}")]
    Integration(String),

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidInput(_) => "invalid-input",
            Error::InsufficientData { .. } => "insufficient-training-data",
            Error::SizeMismatch(_) => "size-mismatch",
            Error::Degenerate(_) => "degenerate",
            Error::UnsupportedScheme(_) => "unsupported-scheme",
            Error::Integration(_) => "integration",
            Error::Malformed { .. } => "malformed-input",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by the caller's data or arguments rather than a
    /// failure during computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Integration(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
