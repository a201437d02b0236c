use std::fmt;
use std::io;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Shapes do not conform for an operation.
    Dim(String),
    /// A line of an annotation file could not be parsed.
    Parse { line: usize, msg: String },
    /// An invalid configuration value.
    Config(String),
    /// NaN or infinity where a finite value is required.
    NonFinite(String),
    /// Checkpoint or scores-file format problem.
    Format(String),
    /// Dataset-level problem (empty file, missing split, ...).
    Data(String),
    /// Two runs being compared were produced from different splits.
    SplitMismatch(String),
    /// Training aborted (divergence), with epoch/step context.
    Diverged(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::SplitMismatch(msg) => write!(f, "split mismatch: {msg}"),
            Error::Diverged(msg) => write!(f, "training diverged: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
