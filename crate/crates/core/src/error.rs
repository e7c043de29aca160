use thiserror::Error;

/// Errors produced by the laboratory.
///
/// `AssumptionFailure` is kept distinct from ordinary input errors: the CLI
/// maps it to its own exit code.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e} below -{tolerance:.3e})")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("assumption failure: {0}")]
    AssumptionFailure(String),

    #[error("covariance Q_inf is degenerate (rank {rank} < {dim}); operation needs the H_inf inner product")]
    DegenerateCovariance { rank: usize, dim: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
