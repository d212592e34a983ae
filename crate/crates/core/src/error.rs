use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or operator had the wrong dimensions for the requested operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// An operator, model, or field could not be constructed from its inputs.
    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("matrix is not symmetric positive definite ({0})")]
    NotSpd(String),

    /// NaN/Inf produced during a computation, or a degenerate numeric state.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Configuration rejected; `key` is the dotted path of the offending entry.
    #[error("invalid config at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Format { .. })
    }
}
