use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{what} is singular or ill-conditioned (reciprocal condition number {rcond:.3e})")]
    Singular { what: &'static str, rcond: f64 },

    #[error("matrix is not negative definite (largest eigenvalue {max_eigenvalue:.3e})")]
    NotNegativeDefinite { max_eigenvalue: f64 },

    #[error("rank-deficient design: columns {columns:?} are linearly dependent on the others")]
    RankDeficient { columns: Vec<String> },

    #[error("{0}")]
    NotConverged(String),

    #[error("ODE state diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("optimizer could not find a feasible step at iteration {iteration}: {reason}")]
    NoFeasibleStep { iteration: usize, reason: String },

    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("parse error in {source_name} at row {row}, column {column}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
