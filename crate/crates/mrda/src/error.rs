use std::fmt;
use std::io;

/// Library-wide error type.
#[derive(Debug)]
pub enum MrdaError {
    /// A caller violated an operation precondition (bad sigma, shape
    /// mismatch, unsupported scale, ...).
    InvalidArgument(String),
    /// A checkpoint or weight transfer failed a structural compatibility
    /// check; the message carries the per-entry report.
    Structural(String),
    /// Required input artifact (checkpoint, corpus, config) is missing.
    MissingArtifact(String),
    /// Wraps filesystem and codec failures.
    Io(io::Error),
    /// Config file could not be parsed.
    Config(String),
}

pub type Result<T> = std::result::Result<T, MrdaError>;

impl fmt::Display for MrdaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MrdaError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            MrdaError::Structural(msg) => write!(f, "structural mismatch: {msg}"),
            MrdaError::MissingArtifact(msg) => write!(f, "missing artifact: {msg}"),
            MrdaError::Io(err) => write!(f, "io error: {err}"),
            MrdaError::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl std::error::Error for MrdaError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            MrdaError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for MrdaError {
    fn from(err: io::Error) -> Self {
        MrdaError::Io(err)
    }
}

impl From<image::ImageError> for MrdaError {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(e) => MrdaError::Io(e),
            other => MrdaError::InvalidArgument(format!("image codec: {other}")),
        }
    }
}

impl From<serde_json::Error> for MrdaError {
    fn from(err: serde_json::Error) -> Self {
        MrdaError::Config(err.to_string())
    }
}

/// Shorthand for `MrdaError::InvalidArgument` with a formatted message.
#[macro_export]
macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::MrdaError::InvalidArgument(format!($($arg)*))
    };
}

/// Early-return variant of [`invalid_arg!`].
#[macro_export]
macro_rules! ensure_arg {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::invalid_arg!($($arg)*));
        }
    };
}
