use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("code matrix violates invariant: {0}")]
    InvalidMatrix(String),

    /// A column pair shares the same partition, so the VI term is zero.
    #[error("degenerate partition: columns {0} and {1} induce the same partition")]
    DegeneratePartition(usize, usize),

    #[error("search stuck: no valid candidate after {0} resamples")]
    SearchStuck(usize),

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("rank deficient: rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("parse error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Parse { row: Option<usize>, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
