use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("batch norm needs at least two rows in training mode")]
    DegenerateBatch,
    #[error("cannot max-pool an empty set of rows")]
    EmptyPool,
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("gradient failure: {0}")]
    Gradient(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate cloud: all points coincide")]
    DegenerateCloud,
    #[error("degenerate entropy: every nearest-neighbor distance is zero")]
    DegenerateEntropy,
    #[error("need at least {needed} points to split into {levels} subsets, got {got}")]
    InsufficientPoints { needed: usize, levels: usize, got: usize },
    #[error("subset of {size} points is too small for K = {k}")]
    SubsetTooSmall { size: usize, k: usize },
    #[error("neighbor graph: {0}")]
    Graph(String),
    #[error("parse error in {path} at {location}: {message}")]
    Parse { path: PathBuf, location: String, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
