use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for {op} (size {size})")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("value {value} out of range for {what}: expected {expected}")]
    Range {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("non-finite loss component `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("degenerate basis: row {row} has residual norm {norm:e} after projection")]
    DegenerateBasis { row: usize, norm: f64 },

    #[error("failed to sample a full-rank mixing matrix after {0} attempts")]
    RankDeficient(usize),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    /// True for failures of numerical origin (exit code 2 in the CLI).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteLoss(_)
                | Error::DegenerateBasis { .. }
                | Error::RankDeficient(_)
        )
    }
}
