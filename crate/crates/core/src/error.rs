use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed volume header {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("truncated payload {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("no edge between regions {0} and {1}")]
    MissingEdge(u32, u32),

    #[error("watershed needs at least one seed")]
    EmptySeeds,

    #[error("selection is not an exact leaf cover: {0}")]
    ExactCover(String),

    #[error("empty hypothesis: {0}")]
    EmptyNode(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("classifier failed on node {node}: {reason}")]
    Classifier { node: u32, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
