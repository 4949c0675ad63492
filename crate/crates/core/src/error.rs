use thiserror::Error;

/// Errors raised anywhere in the search pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("cycle detected among nodes {0:?}")]
    Cycle(Vec<usize>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient requested for non-scalar output of shape {0}x{1}")]
    NonScalarOutput(usize, usize),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("matrix not positive definite after jitter up to {0:e}")]
    NotPositiveDefinite(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph `{0}` cannot be evaluated by a tabular oracle")]
    Unevaluable(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
