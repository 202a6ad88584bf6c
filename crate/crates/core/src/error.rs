use thiserror::Error;

/// Errors produced by the simulation, estimation and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("linear system is singular (smallest eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e})")]
    SingularSystem { min_eigenvalue: f64, tolerance: f64 },

    #[error("eigendecomposition did not converge within {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("policy received an empty candidate set")]
    EmptyCandidates,

    #[error("residual degrees of freedom are not positive (T = {horizon}, effective dimension = {effective_dim})")]
    DegenerateDof { horizon: usize, effective_dim: f64 },

    #[error("signal vector is zero; the aligned direction is undefined")]
    ZeroSignal,

    #[error("feature at round {round} has norm {norm}, expected unit norm")]
    NotUnitNorm { round: usize, norm: f64 },

    #[error("target direction has a component of norm {outside:e} outside the range of the pooled design")]
    IdentificationFailure { outside: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
