use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("non-finite value in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("{}:{line}: {reason}", path.display())]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("{}:{line}: frame counter {frame} does not increase (previous {previous})", path.display())]
    NonMonotoneFrames {
        path: PathBuf,
        line: usize,
        previous: i64,
        frame: i64,
    },

    #[error("fall instance `{instance_id}` has no onset/impact annotation")]
    MissingAnnotation { instance_id: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("weight file: {0}")]
    Weights(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Numeric { .. } => "numeric",
            Error::Parse { .. } => "parse",
            Error::NonMonotoneFrames { .. } => "non_monotone_frames",
            Error::MissingAnnotation { .. } => "missing_annotation",
            Error::Data(_) => "data",
            Error::Weights(_) => "weights",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
