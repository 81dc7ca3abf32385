use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The raw Euler update drifted too far from unit norm; the timestep is too large.
    #[error("norm guard: pre-normalization norm deviates from 1 by {deviation:.3e} (limit {limit:.3e})")]
    NormGuard { deviation: f64, limit: f64 },

    /// The diffusion vector is numerically zero, so the step density is undefined.
    #[error("degenerate diffusion: |sigma|^2 = {0:.3e}")]
    DegenerateDiffusion(f64),

    #[error("stationary state rejected: {0}")]
    Stationary(String),

    #[error("nonpositive stationary weight {0:.3e}")]
    NonpositiveWeight(f64),

    #[error("gaussian moments outside the validity domain: {0}")]
    MomentDomain(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("{0:.3}% of the state's mass lies outside the phase-space grid")]
    GridCoverage(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
