use thiserror::Error;

/// Errors raised by the spectral models, simulators and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("joint spectral amplitude is not integrable: {0}")]
    NotIntegrable(String),

    #[error("grid does not contain the {required:.3} rad/ps support on the {axis} axis (half-extent {available:.3})")]
    GridTooSmall { axis: &'static str, required: f64, available: f64 },

    #[error("grid undersampled: trace deviates from one by {0:.3e}")]
    Undersampled(f64),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("heralding frequency {omega:.4} rad/ps lies outside the spectral support")]
    VanishingSupport { omega: f64 },

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("fit failed after {restarts} restarts (residual {residual:.3e})")]
    FitFailed { restarts: usize, residual: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
