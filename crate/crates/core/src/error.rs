use thiserror::Error;

/// Failure modes shared by every module in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("approximate solution is numerically rank deficient (rank {rank} < {cols}); supply a finite theta")]
    RankDeficient { rank: usize, cols: usize },

    #[error("matrix is not positive definite; regularize before retrying")]
    NotPositiveDefinite,

    #[error("input violates the J-orthogonality constraint: {0}")]
    NotFeasible(String),

    #[error("iteration did not converge after {iterations} steps")]
    NoConvergence { iterations: usize },

    #[error("rank-one backward error is undefined when both vectors are zero")]
    BothZero,

    #[error("shifted sketched Gram matrix is not positive definite (shift {shift:e})")]
    ShiftNotPD { shift: f64 },

    #[error("deflation vector is zero")]
    ZeroDeflator,

    #[error("columns are not orthonormal (deviation {deviation:e})")]
    ColumnsNotOrthonormal { deviation: f64 },

    #[error("instance too large for exhaustive search: n = {n}, d = {d} (limit n <= 3, d <= 2)")]
    SizeGuard { n: usize, d: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch { expected: expected.into(), got: got.into() }
}
