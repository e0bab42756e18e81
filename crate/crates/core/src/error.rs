use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed image file: {0}")]
    MalformedImage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("non-finite energy at iteration {iteration} (total so far: {iterations_run} iterations)")]
    NonFiniteEnergy {
        iteration: usize,
        iterations_run: usize,
    },

    #[error("conjugate gradient did not converge within {max_iters} iterations (residual {residual:e})")]
    CgDiverged { max_iters: usize, residual: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file version {found} unsupported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("missing saliency mask for {0}")]
    MissingSaliencyMask(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
