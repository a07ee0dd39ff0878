use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),

    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    #[error("backward context does not match the supplied scene/intrinsics/pose")]
    StaleContext,

    #[error("non-finite value{}: {message}", pixel.map(|(x, y)| format!(" at pixel ({x}, {y})")).unwrap_or_default())]
    Numeric {
        message: String,
        pixel: Option<(usize, usize)>,
    },

    #[error("rendered and observed depth do not overlap")]
    EmptyOverlap,

    #[error("initial pose does not see the map")]
    InitOutOfMap,

    #[error("optimization failed at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn numeric(message: impl Into<String>, pixel: Option<(usize, usize)>) -> Self {
        Error::Numeric {
            message: message.into(),
            pixel,
        }
    }

    /// Innermost error, looking through iteration wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad inputs (files, arguments, configs).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidArgument(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Config(_)
                | Error::InvalidSpec(_)
                | Error::DegenerateCloud(_)
                | Error::EmptyOverlap
                | Error::InitOutOfMap
        )
    }
}
