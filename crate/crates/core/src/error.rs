use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate channel for group {group}: interfering channels are rank deficient")]
    DegenerateChannel { group: usize },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("convex subproblem is infeasible (max violation {violation:e})")]
    InfeasibleSubproblem { violation: f64 },

    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
