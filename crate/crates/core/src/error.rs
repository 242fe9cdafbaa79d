use thiserror::Error;

/// Errors produced by expansion, fitting, data loading and model I/O.
#[derive(Debug, Error)]
pub enum LcenError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("cannot parse term '{input}': {reason}")]
    TermParse { input: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("every hyperparameter combination failed during cross-validation: {0}")]
    AllCombinationsFailed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LcenError>;
