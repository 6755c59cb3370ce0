use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The requested potential or bound is infinite for a recurrent configuration.
    #[error("divergence guard: {0}")]
    Divergence(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e}): {context}")]
    NonConvergence {
        context: String,
        iterations: usize,
        last_change: f64,
        trace: Vec<f64>,
    },

    #[error("monotonicity probe failed: {0}")]
    Monotonicity(String),

    #[error("sign condition h(s)*s >= 0 violated at s = {0}")]
    SignCondition(f64),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
