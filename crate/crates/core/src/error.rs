use thiserror::Error;

/// Errors raised by the library and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("non-finite {what} at {point}")]
    NonFinite { what: &'static str, point: String },

    #[error("covariance is not positive definite at t = {t} (freeze point {point})")]
    SingularCovariance { t: f64, point: String },

    #[error("non-finite convolution integrand at u = {u}, (w, z) = {point}")]
    Quadrature { u: f64, point: String },

    #[error("Euler scheme diverged at step {step}")]
    Divergence { step: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("method mismatch: {0}")]
    MethodMismatch(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
