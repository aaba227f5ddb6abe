use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the conformal pipeline.
///
/// Variants are split into two families: input/validation problems (bad
/// files, invalid configuration, contract violations) and numeric/runtime
/// failures (non-finite iterates, degenerate statistics). The CLI maps the
/// first family to exit code 1 and the second to exit code 2.
#[derive(Debug, Error)]
pub enum CpError {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain mismatch: expected {expected}, found {found}")]
    DomainMismatch { expected: String, found: String },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("class {0} has no calibration examples")]
    MissingClass(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<CpError>,
    },

    #[error("repetition with seed {seed}: {source}")]
    Repetition {
        seed: u64,
        #[source]
        source: Box<CpError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CpError::Invalid(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        CpError::Numeric(msg.into())
    }

    /// True for errors caused by bad inputs or configuration rather than a
    /// failure during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            CpError::Row { source, .. } | CpError::Repetition { source, .. } => {
                source.is_validation()
            }
            CpError::Numeric(_) | CpError::Io(_) => false,
            _ => true,
        }
    }

    pub(crate) fn at_row(self, row: usize) -> Self {
        CpError::Row {
            row,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CpError>;
