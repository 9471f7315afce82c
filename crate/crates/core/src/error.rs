use thiserror::Error;

/// Errors produced by the estimation, inference and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite model evaluation at row {row}")]
    NonFiniteEvaluation { row: usize },

    #[error("parameter/predictor outside model domain at row {row}: {reason}")]
    DomainViolation { row: usize, reason: String },

    #[error("analytic second derivatives not available for model `{0}`")]
    NotAvailable(String),

    #[error("normal equations are singular (condition number {condition:.3e}); try Levenberg-Marquardt")]
    SingularNormalEquations { condition: f64 },

    #[error("line search failed: no decrease of S down to step scale {scale:.3e}")]
    LineSearchFailed { scale: f64 },

    #[error("fit did not converge (status: {0})")]
    NotConverged(String),

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("R factor of the Jacobian is singular")]
    SingularJacobian,

    #[error("grid too coarse: no crossing of the region threshold found")]
    GridTooCoarse,

    #[error("weighted system X'WX is singular (condition number {condition:.3e})")]
    SingularWeightedSystem { condition: f64 },

    #[error("no observation within the kernel bandwidth of the query point")]
    EmptyNeighborhood,

    #[error("variance model produced a non-finite weight at row {row}")]
    DegenerateWeights { row: usize },

    #[error("chain never accepted a move after burn-in")]
    ZeroAcceptance,

    #[error("{failed} of {reps} replications failed to fit")]
    TooManyFailures { failed: usize, reps: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
