use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("profile denominator vanished at y = {y}")]
    SingularProfile { y: f64 },

    #[error("hermite degree {0} exceeds the supported maximum of {max}", max = crate::hermite::MAX_DEGREE)]
    DegreeTooLarge(usize),

    #[error("weight tail mass {tail:e} outside the mesh exceeds tolerance {tol:e}")]
    WeightTruncated { tail: f64, tol: f64 },

    #[error("mesh spacing {spacing:e} does not resolve the weight width {width:e}")]
    MeshTooCoarse { spacing: f64, width: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid time interval: sigma = {sigma}, s = {s}")]
    InvalidInterval { sigma: f64, s: f64 },

    #[error("input is not orthogonal to the low modes (relative projection {residual:e})")]
    NotOrthogonal { residual: f64 },

    #[error("modulation Jacobian is singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("modulation Newton iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NewtonFailed { residual: f64, iterations: usize },

    #[error("time step fell below the minimum {ds_min:e} at s = {s}")]
    StepTooSmall { s: f64, ds_min: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
