use thiserror::Error;

/// Errors raised by the library. Solver outcomes such as `Boundary` or
/// `Unbounded` are not errors; they are reported through
/// [`crate::dual_solvers::SolveStatus`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size must be even and at least {min}, got {got}")]
    InvalidGridSize { got: usize, min: usize },

    #[error("samples live on grids of different sizes ({left} vs {right})")]
    GridMismatch { left: usize, right: usize },

    #[error("order {order} too large for a grid of {grid} nodes (need order < {limit})")]
    OrderTooLarge { order: usize, grid: usize, limit: usize },

    #[error("time series needs at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("non-finite value in input: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state matrix is not stable (spectral radius {0:.6} >= 1)")]
    Unstable(f64),

    #[error("pair (A, B) is not reachable (rank {rank} < {dim})")]
    NotReachable { rank: usize, dim: usize },

    #[error("prior spectrum must be strictly positive (min value {0:e})")]
    NonPositivePrior(f64),

    #[error("invalid regularization: {0}")]
    InvalidRegularization(String),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("no feasible starting point: {0}")]
    NoInteriorStart(String),

    #[error("primal oracle did not converge (constraint violation {violation:e})")]
    OracleNotConverged { violation: f64 },

    #[error("internal solver error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
