//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by dataset ingestion, model fitting, training, and
/// artifact (de)serialization.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// A required CSV column is absent from the header.
    #[error("missing required column '{0}'")]
    MissingColumn(String),

    /// A CSV data row failed validation; `line` is the 1-based file line.
    #[error("line {line}: {msg}")]
    BadRow { line: u64, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Nonlinear curve fit could not produce a finite optimum.
    #[error("curve fit failed: {0}")]
    FitFailed(String),

    /// Malformed or truncated model payload.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// Model payload carries an unsupported format version.
    #[error("unsupported model version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    /// Feature schema of a stored predictor does not match this build.
    #[error("feature schema version {found} does not match supported version {expected}")]
    SchemaVersion { found: u32, expected: u32 },
}

impl Error {
    /// True for usage/IO-class failures (unreadable paths, malformed CSV),
    /// as opposed to domain failures (fit errors, empty results).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Csv { .. } | Error::MissingColumn(_) | Error::BadRow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
