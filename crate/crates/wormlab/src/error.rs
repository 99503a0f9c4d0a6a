//! Error taxonomy shared by the whole lab.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The requested configuration cannot be built (bad shapes, unknown
    /// names, empty representative sets, out-of-range hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of contract (backward before forward,
    /// masks over mismatched parameters, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A file had the right to exist but the wrong bytes.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    /// Training produced a NaN/Inf loss; the run is aborted with the
    /// position of the offending batch.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
