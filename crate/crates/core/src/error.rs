use std::path::PathBuf;

/// Failure categories shared by every module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller violated a precondition (shapes, sizes, parameter ranges).
    #[error("rejected input: {0}")]
    InvalidInput(String),
    /// Input is well-formed but carries no usable information.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// A forward value or loss went NaN/Inf.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A file could not be parsed into a dataset record.
    #[error("ingestion error in {}: {message}", path.display())]
    Ingestion { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the CLI's machine-readable error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Degenerate(_) => "degenerate-input",
            Error::Numeric(_) => "numeric",
            Error::Ingestion { .. } => "ingestion",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
