use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dictionary violates the required structure: {0}")]
    Dictionary(String),

    #[error("matrix is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("missing sample batch for input channel {0}")]
    MissingBatch(usize),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("LMI problem infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("independent verification failed: {0}")]
    Verification(String),

    #[error("feedback undefined at x = {x:?} (scheduling condition {condition:.3e})")]
    SingularFeedback { x: Vec<f64>, condition: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
