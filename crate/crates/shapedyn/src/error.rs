use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("finite-difference step {h} exceeds the smoothness radius {radius}")]
    StepTooLarge { h: f64, radius: f64 },
    #[error("nodal point: |psi| = {modulus:e} below threshold {threshold:e}")]
    NodalPoint { modulus: f64, threshold: f64 },
    #[error("gauge mismatch: operator for {expected} applied to a {got} wave function")]
    GaugeMismatch { expected: String, got: String },
    #[error("wave function tagged G1 is not similarity invariant (deviation {0:e})")]
    NotInvariant(f64),
    #[error("user-supplied conformal factor is not homogeneous of degree -2 (relative deviation {0:e})")]
    NotHomogeneous(f64),
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("no zero-energy rescaling possible: V = {0} is not negative")]
    NoZeroEnergy(f64),
    #[error("conditional wave function vanishes on the probe set")]
    ZeroConditional,
    #[error("time function not monotone on {fraction:.3} of the paths")]
    ClockViolation { fraction: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::DegenerateConfiguration(msg.into())
}

pub(crate) fn invalid_param(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
}
