use std::path::PathBuf;

/// Errors raised by the simulation, analysis and learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numeric failure at voxel {voxel}: {message}")]
    Numeric { voxel: usize, message: String },

    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("invalid path at step {step}: {message}")]
    InvalidPath { step: usize, message: String },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("normalization undefined: reference series has zero range")]
    UndefinedNormalization,

    #[error("reward table incomplete, {} movement(s) failed: {failed:?}", failed.len())]
    PartialTable { failed: Vec<usize> },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
