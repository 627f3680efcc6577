use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity was produced.
    #[error("numeric failure in {op} (node {node})")]
    Numeric { node: usize, op: String },

    /// Training diverged or produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("parse error in {path}{}: {message}", .row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Parse {
        path: String,
        row: Option<usize>,
        message: String,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    /// Invalid run configuration; names the offending field.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A checkpoint does not match the declared model or format.
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
