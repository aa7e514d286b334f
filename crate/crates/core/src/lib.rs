//! Adaptive-accuracy Gaussian process surrogate training for simulation-based
//! parameter identification.
//!
//! This crate builds cheap surrogate models of an expensive forward simulator
//! `y: X ⊂ ℝᵈ → ℝᵐ` whose evaluations can be requested at any tolerance `ε`
//! (tighter tolerances cost more work, `W(ε) = ε^{−2s}`). The surrogate is a
//! heteroscedastic simple-kriging Gaussian process in which each training point
//! carries its own noise level `εᵢ²`. The goal is not surrogate accuracy per se
//! but the accuracy of the parameter estimate obtained by solving an inverse
//! problem against the surrogate, so training points and tolerances are chosen
//! to minimize a goal-oriented global error functional under a work budget.
//!
//! The main pieces:
//!
//! * [`gp`] — kriging with per-point noise: posterior mean/variance/derivative
//!   and marginal-likelihood hyperparameter fitting ([`hyperopt`]).
//! * [`inverse`] — box-constrained Gauss-Newton MAP estimation and Laplace
//!   uncertainty quantification.
//! * [`error_model`] — the error-transport weight `w̃(p)`, the local error
//!   density `g(p) = w̃(p)·ε(p)` used as acquisition function, and the global
//!   `L^q` error estimate `E` with its gradient in `v = ε^{−2}` space.
//! * [`work`] — tolerance-to-cost models and the incremental budget controller.
//! * [`design_opt`] — one step of the sequential design problem: candidate
//!   generation/filtering and the accuracy-allocation solve.
//! * [`forward`] — the tolerance-controlled forward-model contract plus two
//!   built-in models (an analytic trigonometric test model and a quantized
//!   refinement-level mock of discretized solvers).
//! * [`driver`] — the assembled adaptive loop, baselines, reliability study,
//!   reconstruction, and run artifacts.

// Validation guards are written `!(x > 0.0)` on purpose: the negation is what
// makes NaN fail the check instead of slipping through `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod design_opt;
pub mod driver;
pub mod error;
pub mod error_model;
pub mod forward;
pub mod gp;
pub mod halton;
pub mod hyperopt;
pub mod inverse;
pub mod kernel;
pub mod seed;
pub mod work;

pub use design::{Design, DomainBox, TrainingData};
pub use design_opt::{CandidateGenerator, CandidateSet, CandidateStrategy, EvaluationOrder};
pub use driver::{
    adaptive_run, position_adaptive_run, reconstruct, reconstruct_true_parameter,
    reliability_study, RunArtifacts, RunConfig, RunStatus,
};
pub use error::{Error, Result};
pub use error_model::{EpsilonMode, ErrorModelConfig, IntegrationSpec, NodeTable};
pub use forward::{
    Evaluation, ForwardModel, NoiseMode, ParabolicCylinderModel, QuantizedLevelModel,
};
pub use gp::SurrogateModel;
pub use inverse::{InverseProblem, ReconstructionResult};
pub use kernel::Hyperparameters;
pub use work::{BudgetController, WorkModel};
