use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Cholesky factorization failed even after jitter escalation.
    #[error("cholesky failed on {size}x{size} matrix (last jitter {jitter:e})")]
    Decomposition { size: usize, jitter: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Error raised inside the filter recursion, tagged with the step index.
    #[error("filter step {step}: {source}")]
    Filter {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("missing file: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Filter { .. } => e,
            e => Error::Filter {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Exit code used by the command-line runner: 2 for configuration
    /// problems, 1 for everything that fails at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::Config(_) | Error::MissingPath(_) => 2,
            _ => 1,
        }
    }
}
