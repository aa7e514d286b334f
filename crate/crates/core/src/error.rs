//! Crate-wide error type.

use thiserror::Error;

/// Errors shared across the surrogate-training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// The (K̄+Ē) covariance matrix could not be factorized even after jitter
    /// escalation; usually signals duplicate points or non-positive tolerances.
    #[error("covariance factorization failed for {n} training points after jitter escalation")]
    FactorizationFailure { n: usize },

    /// The Gauss-Newton normal matrix is singular (rank-deficient Jacobian
    /// combined with an improper prior).
    #[error("normal matrix is singular: rank-deficient Jacobian with an improper prior")]
    SingularNormalMatrix,

    /// The transport factor is not computable with λ = 0 at this point.
    #[error("transport factor singular (λ = 0 with a rank-deficient Jacobian); retry with λ > 0")]
    SingularTransport,

    /// The exact-form radius bound is outside its contraction regime.
    #[error("radius bound outside its validity regime: denominator {denominator:.6e} ≤ 0")]
    InvalidRegime { denominator: f64 },

    /// A refinement attempted to loosen a tolerance.
    #[error("refinement must tighten: requested ε = {requested:.6e} ≥ current ε = {current:.6e}")]
    RefinementOrderViolation { requested: f64, current: f64 },

    /// Candidate generation could not find an admissible point.
    #[error("no admissible candidate point found after {attempts} draws")]
    ExhaustedCandidates { attempts: usize },

    /// The accuracy-allocation budget does not exceed the cost of the current design.
    #[error("allocation budget {budget:.6e} does not exceed current design work {base:.6e}")]
    InfeasibleBudget { budget: f64, base: f64 },

    /// An evaluation was requested outside the model domain.
    #[error("point lies outside the model domain box")]
    DomainViolation,

    /// Invalid argument or configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
