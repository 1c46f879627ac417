use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unknown action id {0}")]
    UnknownAction(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("singular system in {context} (condition estimate {condition:e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e} (condition estimate {condition:e})")]
    IllConditioned {
        residual: f64,
        tolerance: f64,
        condition: f64,
    },

    #[error("moment table has no cell for support {support}, action {action}")]
    MissingCell { support: usize, action: usize },

    #[error("malformed record at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
