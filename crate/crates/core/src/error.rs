use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto exit codes, so keep the
/// categories coarse: configuration, data, structure and numerics.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad parameter values, conflicting specs, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A structural precondition failed (unknown node id, shape mismatch).
    #[error("structural error: {0}")]
    Structure(String),

    /// The requested problem has no feasible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Numerical failure (non-finite objective, degenerate scaling).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
