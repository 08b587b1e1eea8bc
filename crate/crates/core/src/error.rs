//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by dynamics, estimation, control and simulation code.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, dimensions or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure inside the rigid-body dynamics (singular or
    /// ill-conditioned inertia matrix).
    #[error("dynamics error: {0}")]
    Dynamics(String),

    /// A filter produced a non-finite or non-invertible quantity.
    #[error("filter divergence: {0}")]
    FilterDivergence(String),

    /// The robust-branch safeguard could not produce a valid inflated
    /// covariance for the configured tuning.
    #[error("tuning error at step {step}: {msg}")]
    Tuning { step: usize, msg: String },

    /// The control law produced a non-finite torque.
    #[error("controller error: {0}")]
    Controller(String),

    /// A stability-theorem precondition does not hold (k_d <= delta).
    #[error("theorem inapplicable: {0}")]
    TheoremInapplicable(String),

    /// Numeric differentiation hit a non-finite function value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The simulated plant state became non-finite.
    #[error("simulation blow-up at step {step}")]
    BlowUp { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
