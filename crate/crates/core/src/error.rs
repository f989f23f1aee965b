use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by dataset construction, training and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range, or inconsistent.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but does not follow the expected layout.
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (clean={clean}, noisy={noisy}, reg={reg})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        clean: f64,
        noisy: f64,
        reg: f64,
    },

    /// Two run reports cannot be compared.
    #[error("reports are not comparable: {0}")]
    Mismatch(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
