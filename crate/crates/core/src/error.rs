use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN or infinity produced or consumed by a numeric operation.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("label {label} outside the allowed range [{lo}, {hi})")]
    Label { label: usize, lo: usize, hi: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("sample value {value} outside [-1, 1]")]
    DataRange { value: f32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Something tried to move per-sample data across the site boundary.
    #[error("data membrane violation: {0}")]
    Membrane(String),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("integrity check failed for {}: {reason}", path.display())]
    Integrity { path: PathBuf, reason: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
