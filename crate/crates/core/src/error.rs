use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto a small, stable set of exit codes: malformed or missing input,
/// capacity violations, and everything else.
#[derive(Debug, Error)]
pub enum Error {
    /// A document could not be parsed. `field` names the offending field or
    /// location (for example `shapes[3].points` or `line 7`).
    #[error("parse error at {field}: {message}")]
    Parse { field: String, message: String },

    /// Input was structurally valid but violated a contract of the operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Shapes or lengths of numeric arguments disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A page or batch exceeds what a model can accept.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A serialized artifact has an unexpected format version or type tag.
    #[error("format mismatch: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    /// Training produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
