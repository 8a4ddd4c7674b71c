use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] gridkern::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("verification failed on {case}: {what} mismatch {mismatch:.3e} exceeds {tol:e}")]
    Verification {
        case: String,
        what: &'static str,
        mismatch: f64,
        tol: f64,
    },
    #[error("reference case {0:?} is not among the results")]
    MissingReference(String),
}

impl BenchError {
    /// Process exit status: 1 for a failed equivalence check, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Verification { .. } => 1,
            _ => 2,
        }
    }
}
