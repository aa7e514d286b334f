//! Box-constrained MAP parameter identification against a differentiable model.
//!
//! Given observed data `l̂ ∈ ℝᵐ` with independent Gaussian noise `Σ_l`, a
//! Gaussian prior `N(p⁰, Σ_p)`, and a model mean `µ: X → ℝᵐ`, the maximum a
//! posteriori estimate minimizes
//!
//! ```text
//! J(p) = ½ (µ(p) − l̂)ᵀ Σ_l⁻¹ (µ(p) − l̂) + ½ (p − p⁰)ᵀ Σ_p⁻¹ (p − p⁰)
//! ```
//!
//! over the parameter box. The solver is Gauss-Newton: the step solves
//! `(Jᵀ Σ_l⁻¹ J + Σ_p⁻¹) Δp = −∇J(p)`, which is a descent direction whenever
//! the normal matrix is positive definite, followed by projection onto the box
//! and an Armijo backtracking line search. Several starts spread over a coarse
//! grid guard against local minima of the nonconvex data-fit term. Posterior
//! uncertainty comes from the Laplace approximation at the MAP point, with the
//! surrogate's own predictive variance added to the observation noise so that
//! surrogate error widens the reported bars.
//!
//! Prior variances may be `+∞` to express a flat (uninformative) prior in a
//! coordinate; the corresponding precision entry is zero.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::design::DomainBox;
use crate::error::{Error, Result};
use crate::gp::SurrogateModel;

/// Maximum Gauss-Newton iterations per start.
const MAX_ITERS: usize = 100;
/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Maximum step halvings in the line search.
const MAX_BACKTRACKS: usize = 30;
/// Relative step-norm convergence threshold.
const STEP_TOL: f64 = 1e-10;
/// Objective-decrease convergence threshold (scaled by `1 + |J|`).
const DECREASE_TOL: f64 = 1e-14;
/// Number of multi-start runs.
const N_STARTS: usize = 5;

/// A model that exposes a mean, its Jacobian, and (optionally) a predictive
/// variance per output component.
pub trait DifferentiableModel {
    fn output_dim(&self) -> usize;
    /// Model mean `µ(p) ∈ ℝᵐ`.
    fn mean(&self, p: &DVector<f64>) -> DVector<f64>;
    /// Jacobian `∂µ/∂p ∈ ℝ^{m×d}`.
    fn mean_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64>;
    /// Predictive variance per component (zero for an exact model).
    fn predictive_variances(&self, _p: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.output_dim())
    }
}

impl DifferentiableModel for SurrogateModel {
    fn output_dim(&self) -> usize {
        SurrogateModel::output_dim(self)
    }

    fn mean(&self, p: &DVector<f64>) -> DVector<f64> {
        self.predict(p).0
    }

    fn mean_jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        self.predict_gradient(p)
    }

    fn predictive_variances(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(SurrogateModel::output_dim(self), self.predict_variance(p))
    }
}

/// Outcome of one Gauss-Newton descent.
#[derive(Debug, Clone)]
pub struct GaussNewtonRun {
    pub p: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// MAP estimate with Laplace uncertainty, as returned by [`InverseProblem::solve`].
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub p_map: DVector<f64>,
    pub objective: f64,
    /// Laplace posterior standard deviation per parameter.
    pub posterior_std: DVector<f64>,
    pub converged: bool,
    /// Iterations spent in the winning descent.
    pub iterations: usize,
}

/// The MAP estimation problem: model, data, noise, prior, and parameter box.
pub struct InverseProblem<'m, M: DifferentiableModel + ?Sized> {
    model: &'m M,
    observed: DVector<f64>,
    noise_variances: DVector<f64>,
    prior_mean: DVector<f64>,
    prior_variances: DVector<f64>,
    domain: DomainBox,
}

impl<'m, M: DifferentiableModel + ?Sized> InverseProblem<'m, M> {
    pub fn new(
        model: &'m M,
        observed: DVector<f64>,
        noise_variances: DVector<f64>,
        prior_mean: DVector<f64>,
        prior_variances: DVector<f64>,
        domain: DomainBox,
    ) -> Result<Self> {
        let m = model.output_dim();
        if observed.len() != m || noise_variances.len() != m {
            return Err(Error::config(
                "observed data and noise variances must match the model output dimension",
            ));
        }
        if prior_mean.len() != domain.dim() || prior_variances.len() != domain.dim() {
            return Err(Error::config(
                "prior mean and variances must match the domain dimension",
            ));
        }
        if noise_variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("noise variances must be positive and finite"));
        }
        // Prior variances may be +∞ (flat prior) but not zero, negative, or NaN.
        if prior_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("prior variances must be positive"));
        }
        Ok(InverseProblem {
            model,
            observed,
            noise_variances,
            prior_mean,
            prior_variances,
            domain,
        })
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn prior_precision(&self) -> DVector<f64> {
        self.prior_variances
            .map(|v| if v.is_finite() { 1.0 / v } else { 0.0 })
    }

    /// Negative log posterior (up to a constant).
    pub fn objective(&self, p: &DVector<f64>) -> f64 {
        let r = self.model.mean(p) - &self.observed;
        let data_fit: f64 = r
            .iter()
            .zip(self.noise_variances.iter())
            .map(|(ri, vi)| ri * ri / vi)
            .sum();
        let prec = self.prior_precision();
        let dp = p - &self.prior_mean;
        let prior_fit: f64 = dp
            .iter()
            .zip(prec.iter())
            .map(|(di, wi)| di * di * wi)
            .sum();
        0.5 * (data_fit + prior_fit)
    }

    /// Gradient `∇J(p) = Jᵀ Σ_l⁻¹ r + Σ_p⁻¹ (p − p⁰)`.
    pub fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        let r = self.model.mean(p) - &self.observed;
        let jac = self.model.mean_jacobian(p);
        let weighted_r = DVector::from_fn(r.len(), |i, _| r[i] / self.noise_variances[i]);
        let prec = self.prior_precision();
        let dp = p - &self.prior_mean;
        jac.transpose() * weighted_r + DVector::from_fn(p.len(), |i, _| prec[i] * dp[i])
    }

    /// One Gauss-Newton descent from `start` (projected into the box first).
    pub fn gauss_newton(&self, start: &DVector<f64>) -> Result<GaussNewtonRun> {
        let d = self.domain.dim();
        let prec = self.prior_precision();
        let mut p = self.domain.project(start);
        let mut obj = self.objective(&p);
        let mut converged = false;
        let mut iterations = 0;

        for _ in 0..MAX_ITERS {
            iterations += 1;
            let jac = self.model.mean_jacobian(&p);
            let r = self.model.mean(&p) - &self.observed;
            let weighted_r = DVector::from_fn(r.len(), |i, _| r[i] / self.noise_variances[i]);
            let dp_prior = &p - &self.prior_mean;
            let grad =
                jac.transpose() * &weighted_r + DVector::from_fn(d, |i, _| prec[i] * dp_prior[i]);

            // Normal matrix A = Jᵀ Σ_l⁻¹ J + Σ_p⁻¹.
            let mut a = DMatrix::zeros(d, d);
            for i in 0..self.observed.len() {
                let w = 1.0 / self.noise_variances[i];
                for c1 in 0..d {
                    for c2 in 0..=c1 {
                        let v = w * jac[(i, c1)] * jac[(i, c2)];
                        a[(c1, c2)] += v;
                        if c1 != c2 {
                            a[(c2, c1)] += v;
                        }
                    }
                }
            }
            for c in 0..d {
                a[(c, c)] += prec[c];
            }
            let chol = Cholesky::new(a).ok_or(Error::SingularNormalMatrix)?;
            let delta = chol.solve(&(-&grad));

            // Projected Armijo backtracking.
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let cand = self.domain.project(&(&p + t * &delta));
                let step = &cand - &p;
                if step.norm() == 0.0 {
                    break;
                }
                let cand_obj = self.objective(&cand);
                if cand_obj <= obj + ARMIJO_C * grad.dot(&step) {
                    let decrease = obj - cand_obj;
                    converged = step.norm() <= STEP_TOL * (1.0 + p.norm())
                        || decrease < DECREASE_TOL * (1.0 + obj.abs());
                    p = cand;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // The projected direction yields no admissible decrease: the
                // iterate is stationary to working precision (typically pinned
                // to the box boundary).
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }
        Ok(GaussNewtonRun {
            p,
            objective: obj,
            iterations,
            converged,
        })
    }

    /// Cell centers of the coarse `k^d` start grid, `k = ⌈N^(1/d)⌉`.
    fn start_grid(&self) -> Vec<DVector<f64>> {
        let d = self.domain.dim();
        let k = (N_STARTS as f64).powf(1.0 / d as f64).ceil() as usize;
        let mut centers = Vec::with_capacity(k.pow(d as u32));
        let mut idx = vec![0usize; d];
        loop {
            let p = DVector::from_fn(d, |c, _| {
                let u = (idx[c] as f64 + 0.5) / k as f64;
                self.domain.lower()[c] + u * self.domain.width()[c]
            });
            centers.push(p);
            // Odometer increment.
            let mut c = 0;
            loop {
                idx[c] += 1;
                if idx[c] < k {
                    break;
                }
                idx[c] = 0;
                c += 1;
                if c == d {
                    return centers;
                }
            }
        }
    }

    /// Multi-start MAP solve: the [`N_STARTS`] best grid nodes by objective
    /// seed independent Gauss-Newton descents; the lowest final objective wins.
    /// Laplace posterior standard deviations are evaluated at the winner.
    pub fn solve(&self) -> Result<ReconstructionResult> {
        let mut ranked: Vec<(f64, DVector<f64>)> = self
            .start_grid()
            .into_iter()
            .map(|p| (self.objective(&p), p))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        ranked.truncate(N_STARTS);

        let mut best: Option<GaussNewtonRun> = None;
        for (_, start) in &ranked {
            let run = self.gauss_newton(start)?;
            let better = match &best {
                None => true,
                Some(b) => run.objective < b.objective,
            };
            if better {
                best = Some(run);
            }
        }
        let run = best.expect("the start grid is never empty");
        let posterior_std = self.laplace_stds(&run.p)?;
        Ok(ReconstructionResult {
            p_map: run.p,
            objective: run.objective,
            posterior_std,
            converged: run.converged,
            iterations: run.iterations,
        })
    }

    /// Laplace posterior standard deviations at `p`:
    /// `diag((Jᵀ (Σ_l + Σ_GPR)⁻¹ J + Σ_p⁻¹)⁻¹)^{½}`, where `Σ_GPR` is the
    /// model's own predictive variance per component.
    pub fn laplace_stds(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.domain.dim();
        let jac = self.model.mean_jacobian(p);
        let model_var = self.model.predictive_variances(p);
        let prec = self.prior_precision();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..self.observed.len() {
            let w = 1.0 / (self.noise_variances[i] + model_var[i]);
            for c1 in 0..d {
                for c2 in 0..=c1 {
                    let v = w * jac[(i, c1)] * jac[(i, c2)];
                    a[(c1, c2)] += v;
                    if c1 != c2 {
                        a[(c2, c1)] += v;
                    }
                }
            }
        }
        for c in 0..d {
            a[(c, c)] += prec[c];
        }
        let cov: DMatrix<f64> = Cholesky::new(a)
            .ok_or(Error::SingularNormalMatrix)?
            .inverse();
        Ok(DVector::from_fn(d, |i, _| cov[(i, i)].max(0.0).sqrt()))
    }
}
