use std::path::PathBuf;

/// Errors produced by the library.
///
/// The CLI maps [`Error::Numeric`] to exit code 3 and every other variant to
/// exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wrong container type: expected {expected:?}, found {found:?}")]
    WrongContainer { expected: String, found: String },

    #[error("unsupported {container} version {version}")]
    UnsupportedVersion { container: String, version: u32 },

    #[error("truncated {container} data: need {needed} bytes, have {available}")]
    Truncated {
        container: String,
        needed: u64,
        available: u64,
    },

    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("inconsistent model: {0}")]
    Inconsistent(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
