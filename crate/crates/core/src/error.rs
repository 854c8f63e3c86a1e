use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("graph contains a cycle through node {0}")]
    CyclicGraph(usize),

    #[error("role violation: {0}")]
    RoleViolation(String),

    #[error("dead unit: node {0} is not connected to both an input and an output")]
    DeadUnit(usize),

    #[error("unknown edge {0}")]
    MissingEdge(String),

    #[error("oracle too large: {count} paths exceeds cap {cap}")]
    OracleTooLarge { count: u128, cap: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid rescaling factor {0}")]
    InvalidFactor(f64),

    #[error("degenerate unit: node {0} has an all-zero incoming or outgoing group")]
    DegenerateUnit(usize),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("length error in {path}: {msg}")]
    Length { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
