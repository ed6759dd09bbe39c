use thiserror::Error;

/// Errors raised by the regression toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("weighted objective is not bounded below (total weight {0})")]
    IllPosedObjective(f64),

    #[error("objective is not finite at the starting point")]
    BadObjective,

    #[error("specification mismatch: {0}")]
    SpecMismatch(String),

    #[error("link component {0} has zero covariance with the response")]
    DegenerateSigma(usize),

    #[error("bad data: {0}")]
    BadData(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("infeasible simulation specification: {0}")]
    InfeasibleSpec(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
