use std::path::PathBuf;

/// Errors produced by the protocols, attacks, ingestion and experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// No member of the hash family can satisfy the requested fairness ratio
    /// for this `(domain_size, g)` pair.
    #[error("fairness ratio {rho} is infeasible: the best attainable ratio is {best_ratio}")]
    InfeasibleRho { rho: f64, best_ratio: f64 },

    #[error("no compliant hash function found within {max_draws} draws")]
    DrawBudgetExceeded { max_draws: u64 },

    #[error("subpopulation fraction selects no users")]
    EmptyPopulation,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no users remain after preprocessing")]
    EmptyAfterFilter,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for the two per-sweep-point failures the harness records and skips.
    pub fn is_sweep_point_failure(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleRho { .. } | Error::DrawBudgetExceeded { .. }
        )
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
