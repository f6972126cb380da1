use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FgttError>;

#[derive(Debug, Error)]
pub enum FgttError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("header mismatch: {0}")]
    Header(String),

    #[error("row {row}, feature {feature}: undeclared category {value:?}")]
    Category { row: usize, feature: String, value: String },

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("constant column {0}: standard deviation is zero on the training rows")]
    ConstantColumn(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("surrogate error: {0}")]
    Surrogate(String),
}

impl FgttError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FgttError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FgttError::Training { .. } | FgttError::Surrogate(_) => 3,
            _ => 2,
        }
    }
}
