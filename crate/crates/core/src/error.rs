use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("divergent curve: |gamma * t| = {0:.3} exceeds the exponent guard")]
    DivergentCurve(f64),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("indefinite implied covariance for individual {0}")]
    IndefiniteCovariance(usize),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("{path}: row {row}: {message}")]
    Ingest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation condition {condition} aborted after {failures} consecutive failed replications")]
    Pathology { condition: String, failures: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
