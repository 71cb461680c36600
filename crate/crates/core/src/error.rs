//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model loading, bound propagation, encoding and search.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("adjacency entry at ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinaryAdjacency { row: usize, col: usize, value: f64 },

    #[error("adjacency has a self-loop at node {0}; self terms are carried by w_self")]
    SelfLoop(usize),

    #[error("invalid class pair: {0}")]
    InvalidClass(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),

    #[error("operation requires {expected} perturbations")]
    ModeMismatch { expected: &'static str },

    #[error("enumeration exceeded the cap of {0} matrices")]
    CapExceeded(usize),

    #[error("inconsistent fixings: {0}")]
    InconsistentFixings(String),

    #[error("variable {0} has no bound")]
    UnboundedVariable(String),

    #[error("variable {0} has a non-finite bound")]
    InfiniteBound(String),

    #[error("assignment is missing variable {0}")]
    MissingVariable(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node has no unfixed branching candidate")]
    NoBranchCandidate,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
