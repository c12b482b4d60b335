use alloc::string::String;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("circle grid size {0} must be a power of two and at least 4")]
    InvalidGrid(usize),
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("input is not real-valued (max |imag| = {max_imag:e})")]
    NonReal { max_imag: f64 },
    #[error("point |zeta| = {modulus} lies outside the closed unit disc")]
    OutsideDisc { modulus: f64 },
    #[error("series is not analytic (negative-frequency content {content:e})")]
    NotAnalytic { content: f64 },
    #[error("point with norm {norm} lies outside the graph domain (radius {radius})")]
    OutOfDomain { norm: f64, radius: f64 },
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("recentering map is singular at the requested point")]
    SingularChart,
    #[error("iteration did not converge after {iterations} steps (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("iterate left the graph domain at iteration {iteration} (node {node})")]
    DomainEscape { iteration: usize, node: usize },
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("oracle evaluation failed at phi = {phi}: {message}")]
    OracleFailure { phi: f64, message: String },
    #[error("rank {rank} below the maximal rank {expected} at phi = {phi}")]
    RankDeficient { phi: f64, rank: usize, expected: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T> = core::result::Result<T, Error>;
