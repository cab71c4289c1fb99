use std::path::PathBuf;

/// Errors produced by the index, its providers, and the snapshot codec.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates its contract (bounds, dimensions, budgets).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is malformed (dimension mismatch, empty input, unknown id).
    #[error("input error: {0}")]
    Input(String),

    /// An embedding, summarization, or generation backend failed.
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider {
        message: String,
        attempts: u32,
        retryable: bool,
    },

    /// Cost ledger misuse, e.g. recording outside an open phase.
    #[error("usage error: {0}")]
    Usage(String),

    /// The snapshot is not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// The snapshot was written by an incompatible format version.
    #[error("incompatible snapshot version {found_major}.{found_minor} (supported major {supported_major})")]
    Incompatible {
        found_major: u16,
        found_minor: u16,
        supported_major: u16,
    },

    /// A structural invariant does not hold.
    #[error("integrity error: {invariant}: {detail}")]
    Integrity { invariant: &'static str, detail: String },

    #[error("refusing to overwrite existing file {0} (pass force to replace it)")]
    Exists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn provider(message: impl Into<String>, attempts: u32, retryable: bool) -> Self {
        Error::Provider {
            message: message.into(),
            attempts,
            retryable,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
