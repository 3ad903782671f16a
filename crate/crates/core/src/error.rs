use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A grid or mask was constructed with a zero or mismatched extent.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Run lengths or a compressed token do not describe a valid mask.
    #[error("corrupt mask: {0}")]
    Corrupt(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("empty object: {0}")]
    EmptyObject(String),

    /// Input records violate a data invariant. `records` names the offenders.
    #[error("validation error: {message}{}", format_records(.records))]
    Validation {
        message: String,
        records: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("instance too large: {0}")]
    Size(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn format_records(records: &[String]) -> String {
    if records.is_empty() {
        String::new()
    } else {
        format!(" [{}]", records.join(", "))
    }
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            records: Vec::new(),
        }
    }

    pub(crate) fn validation_with(message: impl Into<String>, records: Vec<String>) -> Self {
        Error::Validation {
            message: message.into(),
            records,
        }
    }

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

    /// True for failures caused by the filesystem or by unreadable input files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Json { .. } | Error::Csv(_))
    }
}
