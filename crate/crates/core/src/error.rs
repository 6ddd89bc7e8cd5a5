use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CqrfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CqrfError {
    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("parse error at row {row}, column {column} ({name}): cannot read {value:?} as a number")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("kernel has zero mass at the query point; increase the bandwidth")]
    Bandwidth,

    #[error("every tree has an empty leaf at the query point; no forest weights available")]
    EmptyWeights,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("no comparable pairs for the concordance index")]
    NoComparablePairs,

    #[error("unsupported model format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
