//! Marginal-likelihood hyperparameter selection.
//!
//! Minimizes the negative log marginal likelihood of [`crate::gp::nlml`] over
//! `[σ_f², l₁…l_d]` inside a data-derived box. The search runs as projected
//! gradient descent in log-coordinates (all hyperparameters are positive
//! scales, so multiplicative steps are the natural geometry) with Armijo
//! backtracking, restarted from a handful of Halton points spread through the
//! log-box to reduce the chance of landing in a poor local minimum.

use nalgebra::DVector;

use crate::design::TrainingData;
use crate::error::{Error, Result};
use crate::gp::nlml;
use crate::halton::HaltonSequence;
use crate::kernel::{HyperBounds, Hyperparameters};

/// Stationarity tolerance on the projected-gradient residual in log-space.
const STATIONARITY_TOL: f64 = 1e-6;
/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Maximum descent iterations per start.
const MAX_ITERS: usize = 200;
/// Maximum step halvings per line search.
const MAX_BACKTRACKS: usize = 40;
/// Number of Halton restart points used by [`optimize_hyperparameters`].
const RESTARTS: usize = 4;

/// Result of a hyperparameter search.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub hyper: Hyperparameters,
    /// NLML value at the returned hyperparameters.
    pub value: f64,
    /// Whether the best start satisfied the stationarity test.
    pub converged: bool,
    /// Total descent iterations across all starts.
    pub iterations: usize,
}

/// Data-derived search box: `σ_f² ∈ [10⁻⁴, 10⁴]·var(ŷ)` (pooled over all
/// output components) and `lᵢ ∈ [10⁻², 10]·widthᵢ`.
pub fn default_bounds(data: &TrainingData) -> HyperBounds {
    let d = data.design().domain().dim();
    let values = data.values();
    let count = (values.nrows() * values.ncols()) as f64;
    let var = if count < 2.0 {
        1.0
    } else {
        let mean = values.iter().sum::<f64>() / count;
        let v = values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / count;
        if v > 1e-300 {
            v
        } else {
            1.0
        }
    };
    let width = data.design().domain().width();
    let mut lower = DVector::zeros(d + 1);
    let mut upper = DVector::zeros(d + 1);
    lower[0] = 1e-4 * var;
    upper[0] = 1e4 * var;
    for i in 0..d {
        lower[i + 1] = 1e-2 * width[i];
        upper[i + 1] = 10.0 * width[i];
    }
    HyperBounds::new(lower, upper).expect("bounds are ordered by construction")
}

/// Geometric midpoint of the box — the canonical cold-start point
/// (`σ_f² = var(ŷ)`, `lᵢ ≈ 0.316·widthᵢ` under [`default_bounds`]).
pub fn default_init(bounds: &HyperBounds) -> Hyperparameters {
    let k = bounds.lower.len();
    let mid = DVector::from_fn(k, |i, _| (bounds.lower[i] * bounds.upper[i]).sqrt());
    Hyperparameters::from_packed(&mid, bounds.clone()).expect("midpoint lies inside the box")
}

/// Evaluates the NLML at log-coordinates `theta`; factorization failures are
/// treated as an infinitely bad objective so the line search backs away.
fn eval_log(
    data: &TrainingData,
    bounds: &HyperBounds,
    theta: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let packed = theta.map(f64::exp);
    let hyper = match Hyperparameters::from_packed(&packed, bounds.clone()) {
        Ok(h) => h,
        Err(_) => return (f64::INFINITY, DVector::zeros(theta.len())),
    };
    match nlml(data, &hyper) {
        // Chain rule: d/d(ln h) = h · d/dh.
        Ok((f, g)) => (f, g.component_mul(&packed)),
        Err(_) => (f64::INFINITY, DVector::zeros(theta.len())),
    }
}

fn clamp_log(theta: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(theta.len(), |i, _| theta[i].clamp(lo[i], hi[i]))
}

/// Single projected-gradient descent run from `theta0` (log-coordinates).
fn descend(
    data: &TrainingData,
    bounds: &HyperBounds,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    theta0: DVector<f64>,
) -> (DVector<f64>, f64, bool, usize) {
    let mut theta = clamp_log(&theta0, lo, hi);
    let (mut f, mut g) = eval_log(data, bounds, &theta);
    if !f.is_finite() {
        return (theta, f, false, 0);
    }
    // Barzilai–Borwein spectral step seed: rescaled from the last accepted
    // move, it approximates the inverse curvature and makes the plain
    // projected-gradient iteration converge at a useful rate.
    let mut step = 1.0;
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..MAX_ITERS {
        let residual = (clamp_log(&(&theta - &g), lo, hi) - &theta).norm();
        if residual <= STATIONARITY_TOL {
            converged = true;
            break;
        }
        iters += 1;
        let mut accepted = false;
        let mut t = step;
        for _ in 0..MAX_BACKTRACKS {
            let cand = clamp_log(&(&theta - t * &g), lo, hi);
            let dir = &cand - &theta;
            if dir.norm() == 0.0 {
                break;
            }
            let (fc, gc) = eval_log(data, bounds, &cand);
            if fc.is_finite() && fc <= f + ARMIJO_C * g.dot(&dir) {
                let y = &gc - &g;
                let sy = dir.dot(&y);
                step = if sy > 1e-300 {
                    (dir.dot(&dir) / sy).clamp(1e-10, 1e10)
                } else {
                    1.0
                };
                theta = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No admissible step: locally stationary to working precision.
            let residual = (clamp_log(&(&theta - &g), lo, hi) - &theta).norm();
            converged = residual <= STATIONARITY_TOL;
            break;
        }
    }
    (theta, f, converged, iters)
}

/// Multi-start search: the warm start plus [`RESTARTS`] Halton points in the
/// log-box. Returns the best stationary point found; the result never has a
/// worse NLML than `init` (the warm start is one of the descents).
pub fn optimize_hyperparameters(
    data: &TrainingData,
    bounds: &HyperBounds,
    init: &Hyperparameters,
) -> Result<OptimizeOutcome> {
    optimize_with_restarts(data, bounds, init, RESTARTS)
}

/// Warm-started single descent (no restarts) — used when hyperparameters are
/// refit incrementally and the previous optimum is a good initial guess.
pub fn refit_hyperparameters(
    data: &TrainingData,
    bounds: &HyperBounds,
    init: &Hyperparameters,
) -> Result<OptimizeOutcome> {
    optimize_with_restarts(data, bounds, init, 0)
}

fn optimize_with_restarts(
    data: &TrainingData,
    bounds: &HyperBounds,
    init: &Hyperparameters,
    restarts: usize,
) -> Result<OptimizeOutcome> {
    let k = bounds.lower.len();
    let lo = bounds.lower.map(f64::ln);
    let hi = bounds.upper.map(f64::ln);

    let mut starts: Vec<DVector<f64>> = vec![init.packed().map(f64::ln)];
    let mut halton = HaltonSequence::new(k);
    for _ in 0..restarts {
        let u = halton.next().expect("halton sequence is infinite");
        starts.push(DVector::from_fn(k, |i, _| lo[i] + u[i] * (hi[i] - lo[i])));
    }

    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    let mut total_iters = 0;
    for theta0 in starts {
        let (theta, f, conv, iters) = descend(data, bounds, &lo, &hi, theta0);
        total_iters += iters;
        if !f.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, fb, _)) => f < *fb,
        };
        if better {
            best = Some((theta, f, conv));
        }
    }
    let (theta, value, converged) =
        best.ok_or_else(|| Error::FactorizationFailure { n: data.n() })?;
    let hyper = Hyperparameters::from_packed(&theta.map(f64::exp), bounds.clone())?;
    Ok(OptimizeOutcome {
        hyper,
        value,
        converged,
        iterations: total_iters,
    })
}
