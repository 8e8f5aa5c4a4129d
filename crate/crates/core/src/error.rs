use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model, sampler and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: row {row}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("path enumeration needs {paths} paths per sequence, limit is {limit}")]
    TooManyPaths { paths: f64, limit: usize },

    #[error("replica {replica} (beta = {beta}) has a -inf power posterior at initialization")]
    Initialization { replica: usize, beta: f64 },

    #[error("ladder tuning failed after {adjustments} adjustments (partial ladder: {partial:?})")]
    Tuning {
        adjustments: usize,
        partial: Vec<f64>,
    },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("sample schema mismatch: missing {missing:?}, extra {extra:?}")]
    Schema {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
