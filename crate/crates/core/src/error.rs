use thiserror::Error;

/// Errors raised by the forward model, the estimator and the bound computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IseError {
    #[error("degenerate detuning: {0}")]
    DegenerateDetuning(String),

    #[error("singular point: coupling detuning equals beta * s at s = {s:e} (V/m)^2")]
    SingularPoint { s: f64 },

    #[error("non-positive fluorescence at grid index {index} (value {value:e})")]
    NonPositiveFluorescence { index: usize, value: f64 },

    #[error("window {channel} spans [{start:e}, {end:e}] m, outside the sampled cell [{cell_start:e}, {cell_end:e}] m")]
    WindowOutOfCell {
        channel: usize,
        start: f64,
        end: f64,
        cell_start: f64,
        cell_end: f64,
    },

    #[error("zero signal power: calibrated measurements are constant")]
    ZeroSignalPower,

    #[error("insufficient samples: K = {samples} must exceed the model order p = {order} (p >= 1)")]
    InsufficientSamples { samples: usize, order: usize },

    #[error("root finding failed: residual {residual:e} exceeds the acceptance bound")]
    RootfindingFailure { residual: f64 },

    #[error("insufficient signal roots: found {found} valid conjugate pairs, need {needed}")]
    InsufficientSignalRoots { found: usize, needed: usize },

    #[error("noise covariance is not symmetric positive definite")]
    SingularCovariance,

    #[error("nuisance block of the Fisher information is singular")]
    SingularNuisanceBlock,

    #[error("target {index} at {angle_deg:.6} deg is at end-fire; the angle bound diverges")]
    EndFireSingularity { index: usize, angle_deg: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },
}

pub type Result<T> = std::result::Result<T, IseError>;

pub(crate) fn invalid(msg: impl Into<String>) -> IseError {
    IseError::InvalidParameter(msg.into())
}
