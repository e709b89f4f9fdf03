use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: String, reason: String },

    /// Adaptive quadrature ran out of subdivisions before meeting its tolerance.
    #[error("quadrature did not converge: value {value:e}, error estimate {error_estimate:e}")]
    Quadrature { value: f64, error_estimate: f64 },

    /// An inner iterative solve stopped before reaching its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The requested quantity is undefined at these parameters (e.g. a log at zero noise).
    #[error("domain error: {0}")]
    Domain(String),

    /// A state-evolution step produced Δ ≥ 1 for block (q, p).
    #[error("state-evolution step failed at block ({q}, {p}): Δ = {delta}")]
    StepFailure { q: usize, p: usize, delta: f64 },

    /// The two-maxima window does not exist inside the search bracket.
    #[error("no phase transition: {0}")]
    NoTransition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput { .. } | Error::Dimension { .. })
    }
}
