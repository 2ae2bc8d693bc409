use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's contract (mismatched dimensions, empty pools, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Caller-supplied data is unusable (non-finite payoffs, inputs).
    #[error("invalid input: {0}")]
    Input(String),

    /// A computation produced a non-finite intermediate.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("double-oracle epoch {epoch}: {message}")]
    Oracle { epoch: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is a divergence rather than a usage problem.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::Oracle { message, .. } => message.contains("non-finite"),
            _ => false,
        }
    }
}

pub(crate) fn ensure_dims(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "{what}: expected length {expected}, got {got}"
        )))
    }
}
