//! Error type shared by every module of the laboratory.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine (quadrature, bisection, Newton) ran out of budget.
    #[error("non-convergence in {routine}: {detail}")]
    NonConvergent { routine: &'static str, detail: String },

    /// A discrete product grid or subset enumeration exceeds its cap.
    #[error("size limit exceeded: {what} needs {requested}, limit is {limit}")]
    Size {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    /// The energy vanishes while the p-variance does not.
    #[error("degenerate witness: var_p = {var_p:e} with zero energy")]
    DegenerateWitness { var_p: f64 },

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    /// Inputs violate the side conditions of the selected inequality regime.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("Lipschitz violation: |h(x)-h(y)| = {gap:e} exceeds |x-y| = {dist:e}")]
    LipschitzViolation { gap: f64, dist: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at byte {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },

    #[error("arity error: variable x{index} used with arity {arity}")]
    Arity { index: usize, arity: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl LabError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }

    pub(crate) fn non_convergent(routine: &'static str, detail: impl Into<String>) -> Self {
        LabError::NonConvergent {
            routine,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
