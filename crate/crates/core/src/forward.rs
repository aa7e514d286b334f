//! Tolerance-controlled forward models.
//!
//! A forward model evaluates `y: 𝒳 → ℝᵐ` to any requested tolerance `ε`,
//! reporting the tolerance actually achieved and the work charged. Refining a
//! previous evaluation to a tighter tolerance charges only the incremental
//! work `W(ε_new) − W(ε_old)` (a stored simulation is continued, not
//! restarted).
//!
//! Two built-in models:
//!
//! * [`ParabolicCylinderModel`] — the analytic test model
//!   `y_j(p) = (cos φⱼ (p₁+p₂) + sin φⱼ (p₂−p₁))²`, `φ ∈ {0, 2, 4}` rad, on
//!   `[0,1]²`. Any tolerance is achieved exactly; in Gaussian mode the value
//!   carries seeded noise `𝒩(0, ε²Iₘ)`, in exact mode none.
//! * [`QuantizedLevelModel`] — wraps a base model behind a discrete ladder of
//!   refinement levels `ε_ℓ = ε₀·ρ^ℓ` with finite-element-style costs, mocking
//!   a PDE solver with mesh hierarchies: the achieved tolerance is the largest
//!   level not exceeding the request, so work arrives in level-sized chunks
//!   and the surplus beyond the requested share must be tracked by the caller.
//!
//! Noise draws are seeded deterministically from `(master seed, p, ε)`, so an
//! evaluation's value depends only on its order parameters — never on
//! execution order or thread interleaving — and refinements reproduce exactly
//! on reruns.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::design::DomainBox;
use crate::error::{Error, Result};
use crate::seed;
use crate::work::WorkModel;

/// Seed-derivation tag for forward-model noise draws.
const EVAL_TAG: &str = "forward-eval";

/// Result of one forward-model evaluation or refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: DVector<f64>,
    /// Tolerance actually achieved (`≤` the request).
    pub eps_achieved: f64,
    /// Work units charged for this order.
    pub work_charged: f64,
}

/// Noise behavior of a model evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Return the true value (for bound validation and oracles).
    Exact,
    /// Perturb each component by seeded `𝒩(0, ε_achieved²)` noise.
    Gaussian { seed: u64 },
}

/// A simulator that can be evaluated to a requested tolerance and refined.
pub trait ForwardModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn domain(&self) -> &DomainBox;
    fn work_model(&self) -> &WorkModel;
    /// Noiseless `y(p)` (oracle/reliability use).
    fn true_value(&self, p: &DVector<f64>) -> DVector<f64>;
    /// Analytic Jacobian of the noiseless model, `m×d`.
    fn true_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
    /// Evaluate at `p` with tolerance at most `eps_request`.
    fn evaluate_to_tolerance(&self, p: &DVector<f64>, eps_request: f64) -> Result<Evaluation>;
    /// Continue a stored evaluation from `eps_old` down to `eps_new`.
    fn refine(&self, p: &DVector<f64>, eps_old: f64, eps_new: f64) -> Result<Evaluation>;
}

fn check_order(domain: &DomainBox, p: &DVector<f64>, eps_request: f64) -> Result<()> {
    if !domain.contains(p) {
        return Err(Error::DomainViolation);
    }
    if !(eps_request > 0.0 && eps_request.is_finite()) {
        return Err(Error::config(
            "requested tolerance must be positive and finite",
        ));
    }
    Ok(())
}

/// Draws the `𝒩(0, ε²Iₘ)` perturbation for an order, seeded by `(p, ε)`.
fn noise_draw(mode: NoiseMode, p: &DVector<f64>, eps: f64, m: usize) -> DVector<f64> {
    match mode {
        NoiseMode::Exact => DVector::zeros(m),
        NoiseMode::Gaussian { seed } => {
            let mut floats: Vec<f64> = p.iter().copied().collect();
            floats.push(eps);
            let mut rng = seed::rng_with_floats(seed, EVAL_TAG, &floats);
            let normal = Normal::new(0.0, eps).expect("positive std");
            DVector::from_fn(m, |_, _| normal.sample(&mut rng))
        }
    }
}

/// Analytic three-output trigonometric model on `[0,1]²`:
/// `y_j(p) = (cos φⱼ (p₁+p₂) + sin φⱼ (p₂−p₁))²`, `φ = (0, 2, 4)` radians.
#[derive(Debug, Clone)]
pub struct ParabolicCylinderModel {
    noise: NoiseMode,
    domain: DomainBox,
    work: WorkModel,
}

/// Projection angles (radians) of the three outputs.
pub const CYLINDER_ANGLES: [f64; 3] = [0.0, 2.0, 4.0];

impl ParabolicCylinderModel {
    pub fn new(noise: NoiseMode) -> Self {
        ParabolicCylinderModel {
            noise,
            domain: DomainBox::unit(2),
            work: WorkModel::generic(0.5).expect("valid exponent"),
        }
    }

    /// Replaces the cost model (default: `s = 1/2`, unit coefficient).
    pub fn with_work_model(mut self, work: WorkModel) -> Self {
        self.work = work;
        self
    }

    /// The linear form `tⱼ(p) = cos φⱼ (p₁+p₂) + sin φⱼ (p₂−p₁)` and its
    /// (constant) gradient `(cos φⱼ − sin φⱼ, cos φⱼ + sin φⱼ)`.
    fn linear_form(j: usize, p: &DVector<f64>) -> (f64, [f64; 2]) {
        let (sin, cos) = CYLINDER_ANGLES[j].sin_cos();
        let t = cos * (p[0] + p[1]) + sin * (p[1] - p[0]);
        (t, [cos - sin, cos + sin])
    }

    /// Constant per-output Hessians `∂²yⱼ/∂p² = 2 vⱼ vⱼᵀ`.
    pub fn output_hessians(&self) -> Vec<DMatrix<f64>> {
        (0..3)
            .map(|j| {
                let (_, v) = Self::linear_form(j, &DVector::zeros(2));
                DMatrix::from_fn(2, 2, |a, b| 2.0 * v[a] * v[b])
            })
            .collect()
    }
}

impl ForwardModel for ParabolicCylinderModel {
    fn param_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn work_model(&self) -> &WorkModel {
        &self.work
    }

    fn true_value(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(3, |j, _| {
            let (t, _) = Self::linear_form(j, p);
            t * t
        })
    }

    fn true_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, 2);
        for j in 0..3 {
            let (t, v) = Self::linear_form(j, p);
            jac[(j, 0)] = 2.0 * t * v[0];
            jac[(j, 1)] = 2.0 * t * v[1];
        }
        jac
    }

    fn evaluate_to_tolerance(&self, p: &DVector<f64>, eps_request: f64) -> Result<Evaluation> {
        check_order(&self.domain, p, eps_request)?;
        let value = self.true_value(p) + noise_draw(self.noise, p, eps_request, 3);
        Ok(Evaluation {
            value,
            eps_achieved: eps_request,
            work_charged: self.work.work_of_tolerance(eps_request),
        })
    }

    fn refine(&self, p: &DVector<f64>, eps_old: f64, eps_new: f64) -> Result<Evaluation> {
        check_order(&self.domain, p, eps_new)?;
        if eps_new >= eps_old {
            return Err(Error::RefinementOrderViolation {
                requested: eps_new,
                current: eps_old,
            });
        }
        let value = self.true_value(p) + noise_draw(self.noise, p, eps_new, 3);
        let work =
            (self.work.work_of_tolerance(eps_new) - self.work.work_of_tolerance(eps_old)).max(0.0);
        Ok(Evaluation {
            value,
            eps_achieved: eps_new,
            work_charged: work,
        })
    }
}

/// A base model hidden behind discrete refinement levels `ε_ℓ = ε₀·ρ^ℓ`.
#[derive(Debug, Clone)]
pub struct QuantizedLevelModel<M: ForwardModel> {
    base: M,
    eps0: f64,
    rho: f64,
    work: WorkModel,
    noise: NoiseMode,
}

impl<M: ForwardModel> QuantizedLevelModel<M> {
    /// `work` is typically a finite-element cost model; `rho ∈ (0,1)` is the
    /// per-level tolerance ratio. Levels return the base's true value until a
    /// perturbation is enabled with [`with_noise`](Self::with_noise).
    pub fn new(base: M, eps0: f64, rho: f64, work: WorkModel) -> Result<Self> {
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(Error::config("level-0 tolerance must be positive"));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::config("level ratio must lie in (0, 1)"));
        }
        Ok(QuantizedLevelModel {
            base,
            eps0,
            rho,
            work,
            noise: NoiseMode::Exact,
        })
    }

    /// Perturb level values at the level's own magnitude.
    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    /// Largest level tolerance `ε_ℓ ≤ eps_request` (level 0 caps the ladder:
    /// requests above `ε₀` still get `ε₀`, never a worse tolerance).
    pub fn achieved_tolerance(&self, eps_request: f64) -> f64 {
        let mut eps = self.eps0;
        while eps > eps_request {
            eps *= self.rho;
        }
        eps
    }

    fn quantized(&self, p: &DVector<f64>, eps_request: f64) -> Result<(DVector<f64>, f64)> {
        check_order(self.base.domain(), p, eps_request)?;
        let eps = self.achieved_tolerance(eps_request);
        // Perturbation at the level's own magnitude, seeded by (p, ε_ℓ) so a
        // level is evaluated identically no matter how it was requested.
        let value =
            self.base.true_value(p) + noise_draw(self.noise, p, eps, self.base.output_dim());
        Ok((value, eps))
    }
}

impl<M: ForwardModel> ForwardModel for QuantizedLevelModel<M> {
    fn param_dim(&self) -> usize {
        self.base.param_dim()
    }

    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }

    fn domain(&self) -> &DomainBox {
        self.base.domain()
    }

    fn work_model(&self) -> &WorkModel {
        &self.work
    }

    fn true_value(&self, p: &DVector<f64>) -> DVector<f64> {
        self.base.true_value(p)
    }

    fn true_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        self.base.true_jacobian(p)
    }

    fn evaluate_to_tolerance(&self, p: &DVector<f64>, eps_request: f64) -> Result<Evaluation> {
        let (value, eps) = self.quantized(p, eps_request)?;
        Ok(Evaluation {
            value,
            eps_achieved: eps,
            work_charged: self.work.work_of_tolerance(eps),
        })
    }

    fn refine(&self, p: &DVector<f64>, eps_old: f64, eps_new: f64) -> Result<Evaluation> {
        if eps_new >= eps_old {
            return Err(Error::RefinementOrderViolation {
                requested: eps_new,
                current: eps_old,
            });
        }
        let (value, eps) = self.quantized(p, eps_new)?;
        let old_level = self.achieved_tolerance(eps_old);
        let work =
            (self.work.work_of_tolerance(eps) - self.work.work_of_tolerance(old_level)).max(0.0);
        Ok(Evaluation {
            value,
            eps_achieved: eps,
            work_charged: work,
        })
    }
}

/// The 8-point boundary design of the 2-d experiments: 4 corners + 4 edge
/// midpoints, all at the given tolerance.
pub fn initial_boundary_design(domain: &DomainBox, eps: f64) -> Result<Vec<(DVector<f64>, f64)>> {
    if domain.dim() != 2 {
        return Err(Error::config(
            "the boundary initial design is defined for 2-d domains",
        ));
    }
    let (lx, ly) = (domain.lower()[0], domain.lower()[1]);
    let (ux, uy) = (domain.upper()[0], domain.upper()[1]);
    let (mx, my) = (0.5 * (lx + ux), 0.5 * (ly + uy));
    let coords = [
        (lx, ly),
        (ux, ly),
        (lx, uy),
        (ux, uy),
        (mx, ly),
        (mx, uy),
        (lx, my),
        (ux, my),
    ];
    Ok(coords
        .iter()
        .map(|&(x, y)| (DVector::from_row_slice(&[x, y]), eps))
        .collect())
}
