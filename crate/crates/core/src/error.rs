use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("graph contains a directed cycle")]
    CyclicGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("malformed data at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("node {node} cannot be its own parent")]
    SelfParent { node: usize },

    #[error("exact enumeration supports at most {max} nodes, got {d}")]
    TooManyNodes { d: usize, max: usize },

    #[error("AUROC is undefined when the ground truth has no {0} entries")]
    UndefinedAuroc(&'static str),

    #[error("non-finite gradient at epoch {epoch} (signal mean {signal_mean}, grad norm {grad_norm})")]
    NonFiniteGradient {
        epoch: usize,
        signal_mean: f64,
        grad_norm: f64,
    },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
