use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("moment system for kernel (p={p}, q={q}) could not be solved")]
    SingularMoments { p: usize, q: usize },

    #[error("unknown coefficient '{0}'")]
    UnknownCoefficient(String),

    #[error("coefficient is not positive definite at x={x:?}, y={y:?} (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite {
        x: Vec<f64>,
        y: Vec<f64>,
        min_eig: f64,
    },

    #[error("CFL violation: dt={dt:e} exceeds the stable bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error(
        "micro box half-width {half_width:e} is below the domain-of-dependence bound {required:e}"
    )]
    BoxTooSmall { half_width: f64, required: f64 },

    #[error("cell solver stalled after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("flux computation failed at {location:?}: {source}")]
    Edge {
        location: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("metadata mismatch: {0}")]
    Mismatch(String),

    #[error("too few usable points: {usable} (need {required})")]
    TooFewPoints { usable: usize, required: usize },

    #[error("time horizon {available:e} is shorter than the required {required:e}")]
    Horizon { available: f64, required: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
