use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },

    #[error("joint count mismatch: sequence `{id}` frame {frame} has {found} joints, expected {expected}")]
    JointCount {
        id: String,
        frame: usize,
        found: usize,
        expected: usize,
    },

    #[error("sequence `{id}` frame {frame} joint {joint}: confidence {value} outside [0, 1]")]
    Confidence {
        id: String,
        frame: usize,
        joint: usize,
        value: f64,
    },

    #[error("sequence `{id}` has non-finite coordinates")]
    NonFinite { id: String },

    #[error("sequence `{id}` has no frames")]
    EmptySequence { id: String },

    #[error("sequence `{id}` has no label")]
    MissingLabel { id: String },

    #[error("sequence `{id}` label {label} is not below {num_classes}")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_classes: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Tensor(#[from] masa_autograd::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
