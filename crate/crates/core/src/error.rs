use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by game construction, evaluation, solving and experiment I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game definition: field `{field}`: {reason}")]
    Construction { field: String, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    /// An evaluator was called outside its domain (e.g. a nonpositive log
    /// argument). Carries the offending point.
    #[error("domain error in {what} at x = {x:?}, u = {u:?}")]
    Domain {
        what: String,
        x: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("solver failure: {reason} (residual {residual:e} after {iterations} iterations)")]
    Solver {
        reason: String,
        residual: f64,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    #[error("{0}")]
    Diagnostics(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn construction(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Construction {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dimension(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain { .. })
    }
}
