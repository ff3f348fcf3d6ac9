use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the fitting, scoring and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix of dimension {dim} is not positive definite (ridge escalated to {ridge:e})")]
    NotPositiveDefinite { dim: usize, ridge: f64 },

    #[error(
        "transition row for cluster {cluster} of layer {layer} has no counts and smoothing is 0"
    )]
    ZeroRow { layer: usize, cluster: usize },

    #[error("enumeration over {traces} traces exceeds the limit of {limit}")]
    TooLarge { traces: u128, limit: u128 },

    #[error("not an NPY file: {0}")]
    NotNpy(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("corrupt: {0}")]
    Corrupt(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trace {index}: {source}")]
    Trace {
        index: usize,
        #[source]
        source: Box<Error>,
    },
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

    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. } | Error::TooLarge { .. } => true,
            Error::Trace { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
