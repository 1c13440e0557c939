use thiserror::Error;

/// Errors raised by the estimation and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("matrix is not positive definite: non-positive pivot at index {index}")]
    NotPositiveDefinite { index: usize },

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("outcome at index {index} is {value}, expected 0 or 1")]
    NonBinaryOutcome { index: usize, value: f64 },

    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("intercept column is not all ones (row {row} holds {value})")]
    BadInterceptColumn { row: usize, value: f64 },

    #[error("loading vector has zero norm")]
    ZeroLoading,

    #[error("Hessian is singular at the final iterate")]
    SingularHessian,

    #[error("no finite dual minimum found for any mu up to {ceiling}")]
    NoFiniteMu { ceiling: f64 },

    #[error("projection direction infeasible: linf residual {linf_residual:.3e}, loading residual {loading_residual:.3e}")]
    Infeasible {
        linf_residual: f64,
        loading_residual: f64,
    },

    #[error("variance estimate is zero")]
    ZeroVariance,

    #[error("solver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
