use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A token in a case file could not be read as a number.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A required block (`baseMVA`, `bus`, `branch`) is missing or unterminated.
    #[error("case structure: {0}")]
    Structure(String),

    #[error("case validation: {0}")]
    Validation(String),

    #[error("branch {branch} references unknown bus id {bus}")]
    UnknownBus { branch: usize, bus: i64 },

    #[error("branch {branch} is in service with r = x = 0")]
    SingularBranch { branch: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sparse construction: {0}")]
    Construction(String),

    /// The sparsity pattern a plan was built for no longer matches its inputs.
    #[error("stale plan: {0}")]
    PlanStale(String),

    #[error("inconsistent sparsity pattern: {0}")]
    Inconsistency(String),

    #[error("dense oracle refused: {n_b} buses exceeds the cap of {cap}")]
    OracleCap { n_b: usize, cap: usize },
}
