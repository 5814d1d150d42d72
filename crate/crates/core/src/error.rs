use thiserror::Error;

/// Errors produced by the modeling, simulation and control layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("compression limit violated in module {module}: delta_l = {delta_l} < {limit}")]
    CompressionLimit { module: usize, delta_l: f64, limit: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("input matrix is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("task space is singular (smallest eigenvalue of J M^-1 J^T = {min_eigenvalue:.3e})")]
    SingularTaskSpace { min_eigenvalue: f64 },

    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("integration diverged at t = {t}: coordinate {coordinate} ({name}) is not finite")]
    IntegrationDiverged { t: f64, coordinate: usize, name: String },

    #[error("static solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    StaticSolve { iterations: usize, residual: f64 },

    #[error("invalid trajectory: {0}")]
    Trajectory(String),

    #[error("trace is missing {0}")]
    TraceMetadata(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
