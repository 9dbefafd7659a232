use std::path::PathBuf;
use thiserror::Error;

/// Error type shared by every subsystem of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic bytes, unknown version or an inconsistent header.
    #[error("format error: {0}")]
    Format(String),

    /// A payload shorter (or longer) than its header promises.
    #[error("corrupt file: {0}")]
    Corruption(String),

    /// Paired files that do not belong to the same utterance.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A domain invariant violated before any work started.
    #[error("validation error: {0}")]
    Validation(String),

    /// Dimension or length requirements not met.
    #[error("size error: {0}")]
    Size(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    /// Non-finite or otherwise unusable numeric input.
    #[error("input error: {0}")]
    Input(String),

    /// A caller broke an API contract (wrong scale tag, mode mismatch, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable one-word category used by the CLI for machine-parsable failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Pairing(_) => "pairing",
            Error::Validation(_) => "validation",
            Error::Size(_) => "size",
            Error::Index { .. } => "index",
            Error::Input(_) => "input",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Training { .. } => "training",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
