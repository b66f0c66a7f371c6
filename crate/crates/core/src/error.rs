use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An ODE integration produced a non-finite or runaway value.
    #[error("numeric instability in {what} at step {step}")]
    NumericInstability { what: &'static str, step: usize },

    #[error("trajectory outside the admissible band: {0}")]
    Domain(String),

    /// The mean target sits on the comfort boundary, so the steady-state
    /// pressure coefficient is undefined.
    #[error("target coincides with the boundary target z = {z}")]
    TargetOnBoundary { z: f64 },

    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    #[error("bisection target not bracketed: {0}")]
    Bracket(String),

    #[error("gain descent left the admissible bracket at mu = {mu}")]
    BracketEscape { mu: f64, trace: Vec<(f64, f64)> },

    #[error("configuration parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
