use thiserror::Error;

/// Errors raised by the lab's numerical and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("coincident points: the kernel is singular on the diagonal")]
    CoincidentPoints,

    #[error("envelope search failed: {0}")]
    EnvelopeSearchFailure(String),

    #[error("tolerance not met: value {value:e}, error estimate {error:e}, requested {requested:e}")]
    ToleranceNotMet {
        value: f64,
        error: f64,
        requested: f64,
    },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("profile is not admissible for this operation: {0}")]
    NonIntegrableProfile(String),

    #[error("function is identically zero")]
    EmptyFunction,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("divergent integrand: {0}")]
    DivergentIntegrand(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
