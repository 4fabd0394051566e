use thiserror::Error;

/// Errors raised by the library. Numeric payloads are reported as `f64`
/// regardless of the scalar type in use.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),
    #[error("validation of {identity} failed: violation {violation:e} at {sample:?}")]
    Validation {
        identity: String,
        violation: f64,
        sample: Vec<f64>,
    },
    #[error("group matching failed: {0}")]
    Matching(String),
    #[error("discrete Lagrangian is not regular (reciprocal condition {rcond:e})")]
    Regularity { rcond: f64 },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(identity: impl Into<String>, violation: f64, sample: Vec<f64>) -> Self {
        Error::Validation {
            identity: identity.into(),
            violation,
            sample,
        }
    }

    /// True for failures of the implicit solver rather than of the model.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::SingularJacobian(_)
        )
    }
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
