use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid corpus: {0}")]
    Corpus(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("stale gram cache: fingerprint {cached:#018x} does not match data {actual:#018x}")]
    StaleGram { cached: u64, actual: u64 },
    #[error("training diverged at iteration {iter}: loss {loss:e} exceeds {limit:e}")]
    Diverged { iter: usize, loss: f64, limit: f64 },
    #[error("insufficient samples for subclass {subclass}: have {have}, need {need}")]
    InsufficientSamples {
        subclass: usize,
        have: usize,
        need: usize,
    },
    #[error("model document: {0}")]
    Document(String),
    #[error("unsupported model document version {0} (expected 1)")]
    Version(u32),
    #[error("instance too large for exact solving: {0}")]
    TooLarge(String),
    #[error("infeasible cover solution: {0}")]
    Infeasible(String),
    #[error("item {index}: {source}")]
    StreamItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numeric procedure itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::StreamItem { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
