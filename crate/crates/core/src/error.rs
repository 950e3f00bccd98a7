use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or state shapes that do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value violates a documented precondition (probability rows, fractions, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An API was used out of order, e.g. a stale forward cache.
    #[error("contract error: {0}")]
    Contract(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("index error: {0}")]
    Index(String),

    /// Malformed binary or text input, located by byte offset (binary
    /// formats) or 1-based line number (text formats).
    #[error("format error at {location}: {message}")]
    Format { location: Location, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where in an input a [`Error::Format`] was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(usize),
    Line(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte {b}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn at_byte(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Byte(offset),
            message: msg.into(),
        }
    }

    pub(crate) fn at_line(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Line(line),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a CLI should report as configuration problems.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
