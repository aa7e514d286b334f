//! One step of the sequential design problem: propose candidate points,
//! filter out those the surrogate cannot benefit from, and allocate accuracy
//! across old and new points under an incremental work budget.
//!
//! The allocation problem is posed in the information variables `v = ε⁻²`:
//!
//! ```text
//!   min Ẽ(v)   s.t.   Σᵢ c·vᵢ^s ≤ budget,   v ≥ v̲,
//! ```
//!
//! where `v̲` holds the (immutable) accuracy already paid for at existing
//! points and zero for candidates. `Ẽ` is non-increasing in every `vᵢ`, so the
//! work constraint is active at any minimizer and solutions can always be
//! pushed outward onto the budget surface along the ray from `v̲`.
//!
//! For `s ≥ 1` the feasible set is convex and `Ẽ` is convex, so an interior
//! log-barrier Newton method converges to the unique global minimizer. For
//! `s < 1` the work constraint is concave and spend-concentration is optimal;
//! following the single-point heuristic, the solver enumerates the `n+j`
//! proposals that spend the whole increment on one point, keeps the best, and
//! polishes it with a projected descent that keeps the budget active.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::error_model::{AccuracyObjective, EpsilonMode, NodeTable};
use crate::gp::SurrogateModel;
use crate::halton::HaltonSequence;
use crate::seed;
use crate::work::WorkModel;

/// Candidates allocated below `1e-6 · max(v*)` are treated as not selected.
pub const SPARSITY_REL: f64 = 1e-6;
/// Tolerance refinements changing `ε` by less than 10% are dropped.
pub const SIGNIFICANCE_REL: f64 = 0.1;
/// Default candidate filter threshold, relative to `|Ẽ(v̲)|`.
pub const FILTER_REL: f64 = 1e-12;
/// A candidate search gives up after `100·k` draws.
const DRAW_FACTOR: usize = 100;
/// Barrier path: complementarity is driven below this times the objective scale.
const BARRIER_GAP_REL: f64 = 1e-11;

/// How new evaluation points are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStrategy {
    /// Top-`k` integration nodes by local error density (the default).
    Acquisition,
    /// Uniform draws over the domain.
    Random,
    /// The next `k` points of a persisted Halton sequence.
    Halton,
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    AcquisitionArgmax,
    Random,
    Halton,
}

/// Proposed evaluation points, disjoint from the current design.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    points: Vec<DVector<f64>>,
    provenance: Vec<Provenance>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        self.provenance[i]
    }

    fn push(&mut self, p: DVector<f64>, from: Provenance) {
        self.points.push(p);
        self.provenance.push(from);
    }
}

/// Stateful candidate source; the Halton skip counter and the random stream
/// persist across design iterations.
#[derive(Debug, Clone)]
pub struct CandidateGenerator {
    strategy: CandidateStrategy,
    halton: HaltonSequence,
    rng: ChaCha8Rng,
}

impl CandidateGenerator {
    pub fn new(strategy: CandidateStrategy, dim: usize, seed: u64) -> Self {
        CandidateGenerator {
            strategy,
            halton: HaltonSequence::new(dim),
            rng: seed::rng(seed, "candidates", &[]),
        }
    }

    pub fn strategy(&self) -> CandidateStrategy {
        self.strategy
    }

    /// Proposes `k` admissible points: inside the domain, at least the
    /// design's minimum separation away from every design point and every
    /// other candidate.
    pub fn generate(
        &mut self,
        design: &Design,
        table: &NodeTable,
        k: usize,
    ) -> Result<CandidateSet> {
        let delta = design.min_separation();
        let mut set = CandidateSet::default();
        let admissible = |set: &CandidateSet, p: &DVector<f64>| {
            design.nearest_distance(p) >= delta
                && set.points.iter().all(|q| (p - q).norm() >= delta)
        };
        let cap = DRAW_FACTOR * k;
        let mut attempts = 0usize;
        match self.strategy {
            CandidateStrategy::Acquisition => {
                // Walk nodes in decreasing error density (ties → lowest index),
                // skipping nodes that collide with the design.
                for idx in table.top_k_density(table.len()) {
                    if set.len() == k {
                        break;
                    }
                    attempts += 1;
                    if attempts > cap {
                        break;
                    }
                    let p = table.node(idx);
                    if admissible(&set, p) {
                        set.push(p.clone(), Provenance::AcquisitionArgmax);
                    }
                }
            }
            CandidateStrategy::Random => {
                let domain = design.domain().clone();
                while set.len() < k && attempts < cap {
                    attempts += 1;
                    let u = DVector::from_fn(domain.dim(), |_, _| self.rng.gen::<f64>());
                    let p = domain.from_unit(&u);
                    if admissible(&set, &p) {
                        set.push(p, Provenance::Random);
                    }
                }
            }
            CandidateStrategy::Halton => {
                let domain = design.domain().clone();
                while set.len() < k && attempts < cap {
                    attempts += 1;
                    let u = self.halton.next().expect("Halton sequence is infinite");
                    let p = domain.from_unit(&u);
                    if admissible(&set, &p) {
                        set.push(p, Provenance::Halton);
                    }
                }
            }
        }
        if set.len() < k {
            return Err(Error::ExhaustedCandidates { attempts });
        }
        Ok(set)
    }
}

/// Drops candidates whose accuracy cannot reduce the error estimate: the
/// allocation gradient `∂Ẽ/∂vᵢ` is evaluated at the lower bound `v̲` and
/// candidates with `|∂Ẽ/∂vᵢ| < TOL` are removed. `tol` defaults to
/// `1e-12·|Ẽ(v̲)|`.
pub fn filter_candidates(
    set: CandidateSet,
    model: &SurrogateModel,
    table: &NodeTable,
    mode: EpsilonMode,
    tol: Option<f64>,
) -> Result<CandidateSet> {
    if set.is_empty() {
        return Ok(set);
    }
    let design = model.train().design();
    let mut points: Vec<DVector<f64>> = design.points().to_vec();
    points.extend(set.points.iter().cloned());
    let n = design.len();
    let v_lower = lower_bounds(design, set.len());
    let objective = AccuracyObjective::new(model.hyper(), &points, table, model.output_dim(), mode);
    let (value, grad) = objective.value_grad(&v_lower)?;
    let tol = tol.unwrap_or(FILTER_REL * value.abs());
    let mut kept = CandidateSet::default();
    for (i, p) in set.points.into_iter().enumerate() {
        if grad[n + i].abs() >= tol {
            kept.push(p, set.provenance[i]);
        }
    }
    Ok(kept)
}

/// Lower bounds `v̲`: the accuracy already paid for at existing points, zero
/// for the `j` candidates.
pub fn lower_bounds(design: &Design, candidates: usize) -> DVector<f64> {
    let n = design.len();
    DVector::from_fn(n + candidates, |i, _| {
        if i < n {
            design.tolerance(i).powi(-2)
        } else {
            0.0
        }
    })
}

/// The accuracy-allocation program for one design step.
#[derive(Debug)]
pub struct AccuracyProblem {
    objective: AccuracyObjective,
    v_lower: DVector<f64>,
    work: WorkModel,
    /// Total budget for the refined design, `ΔW + W(𝒟)` in smooth work units.
    budget: f64,
}

impl AccuracyProblem {
    pub fn new(
        objective: AccuracyObjective,
        v_lower: DVector<f64>,
        work: WorkModel,
        budget: f64,
    ) -> Result<Self> {
        if objective.len() != v_lower.len() {
            return Err(Error::config(
                "allocation bounds must match the objective's point count",
            ));
        }
        if v_lower.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(
                "lower bounds must be finite and non-negative",
            ));
        }
        if !budget.is_finite() {
            return Err(Error::config("work budget must be finite"));
        }
        Ok(AccuracyProblem {
            objective,
            v_lower,
            work,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.v_lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_lower.is_empty()
    }

    pub fn objective(&self) -> &AccuracyObjective {
        &self.objective
    }

    pub fn v_lower(&self) -> &DVector<f64> {
        &self.v_lower
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Smooth design work `Σ c·vᵢ^s`.
    pub fn work_of(&self, v: &DVector<f64>) -> f64 {
        v.iter().map(|&vi| self.work.work_of_v(vi)).sum()
    }

    fn work_grad(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| self.work.work_of_v_grad(v[i]))
    }

    /// Pushes `v̲ + t·(v − v̲)` onto the budget surface (largest feasible `t`);
    /// `Ẽ` is non-increasing in `v`, so this never hurts the objective.
    fn push_to_budget(&self, v: &DVector<f64>) -> DVector<f64> {
        let u = v - &self.v_lower;
        if u.iter().all(|&ui| ui <= 0.0) {
            return v.clone();
        }
        let work_at = |t: f64| {
            let vt = &self.v_lower + &u * t;
            self.work_of(&vt)
        };
        // Bracket the root of W(t) = budget; W is increasing in t. `t = 1`
        // recovers `v` itself, so the projection also pulls an over-budget
        // point back inward.
        let mut hi = 1.0;
        while work_at(hi) < self.budget && hi < 1e12 {
            hi *= 2.0;
        }
        if work_at(hi) < self.budget {
            return &self.v_lower + &u * hi;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if work_at(mid) < self.budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) <= 1e-15 * hi {
                break;
            }
        }
        &self.v_lower + &u * hi
    }

    /// Normalized KKT residual of `min Ẽ s.t. W(v) ≤ budget, v ≥ v̲` at `v`.
    pub fn kkt_residual(&self, v: &DVector<f64>) -> Result<f64> {
        let (_, grad) = self.objective.value_grad(v)?;
        let wg = self.work_grad(v);
        let active: Vec<bool> = (0..v.len())
            .map(|i| v[i] - self.v_lower[i] <= 1e-8 * v[i].max(1.0))
            .collect();
        // Least-squares multiplier for the work constraint over free coords.
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..v.len() {
            if !active[i] {
                num -= grad[i] * wg[i];
                den += wg[i] * wg[i];
            }
        }
        let lambda = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        let mut residual: f64 = 0.0;
        let mut scale: f64 = 1e-300;
        for i in 0..v.len() {
            let stat = grad[i] + lambda * wg[i];
            scale = scale.max(grad[i].abs()).max(lambda * wg[i].abs());
            if active[i] {
                // Multiplier of the bound must be non-negative.
                residual = residual.max((-stat).max(0.0));
            } else {
                residual = residual.max(stat.abs());
            }
        }
        Ok(residual / scale.max(1e-300))
    }
}

/// Solves the allocation program. The returned `v*` satisfies `v* ≥ v̲` and
/// lies on the budget surface to `1e-8` relative accuracy.
pub fn allocate_accuracy(problem: &AccuracyProblem) -> Result<DVector<f64>> {
    let start = feasible_start(problem, 0.5)?;
    allocate_accuracy_from(problem, &start)
}

/// As [`allocate_accuracy`], from a caller-supplied strictly feasible start
/// (used to confirm solver-start independence).
pub fn allocate_accuracy_from(
    problem: &AccuracyProblem,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let base = problem.work_of(problem.v_lower());
    if problem.budget <= base {
        return Err(Error::InfeasibleBudget {
            budget: problem.budget,
            base,
        });
    }
    let v = if problem.work.exponent() >= 1.0 {
        barrier_solve(problem, start)?
    } else {
        single_point_heuristic(problem)?
    };
    Ok(problem.push_to_budget(&v))
}

/// A strictly feasible interior point: spread `fraction` of the work surplus
/// equally over all coordinates.
pub fn feasible_start(problem: &AccuracyProblem, fraction: f64) -> Result<DVector<f64>> {
    let base = problem.work_of(problem.v_lower());
    let surplus = problem.budget - base;
    if surplus <= 0.0 {
        return Err(Error::InfeasibleBudget {
            budget: problem.budget,
            base,
        });
    }
    let target = base + fraction.clamp(0.05, 0.95) * surplus;
    let ones = DVector::from_element(problem.len(), 1.0);
    let work_at = |t: f64| problem.work_of(&(problem.v_lower() + &ones * t));
    let mut hi = 1.0;
    while work_at(hi) < target && hi < 1e18 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if work_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    if lo <= 0.0 {
        return Err(Error::config(
            "failed to construct a strictly interior starting allocation",
        ));
    }
    Ok(problem.v_lower() + ones * lo)
}

/// Interior-point solve of the convex case (`s ≥ 1`): Newton steps on
/// `Ẽ(v) − µ·ln(budget − W(v)) − µ·Σ ln(vᵢ − v̲ᵢ)` along a decreasing
/// barrier path.
fn barrier_solve(problem: &AccuracyProblem, start: &DVector<f64>) -> Result<DVector<f64>> {
    let n = problem.len();
    let mut v = start.clone();
    // Repair a start that is not strictly interior.
    let strictly_feasible = |v: &DVector<f64>| {
        problem.work_of(v) < problem.budget && (0..n).all(|i| v[i] > problem.v_lower[i])
    };
    if !strictly_feasible(&v) {
        v = feasible_start(problem, 0.5)?;
    }
    let f0 = problem.objective.value(&v)?;
    let scale = f0.abs().max(1e-300);
    let n_cons = (n + 1) as f64;
    let mut mu = 0.1 * scale / n_cons;
    let mu_final = BARRIER_GAP_REL * scale / n_cons;

    let barrier = |v: &DVector<f64>, mu: f64| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let (f, g, h) = problem.objective.value_grad_hess(v)?;
        let r = problem.budget - problem.work_of(v);
        let wg = problem.work_grad(v);
        let mut val = f - mu * r.ln();
        let mut grad = g + &wg * (mu / r);
        let mut hess = h + (&wg * wg.transpose()) * (mu / (r * r));
        for i in 0..n {
            let slack = v[i] - problem.v_lower[i];
            val -= mu * slack.ln();
            grad[i] -= mu / slack;
            hess[(i, i)] += mu / (slack * slack) + mu / r * problem.work.work_of_v_hess(v[i]);
        }
        Ok((val, grad, hess))
    };

    while mu > mu_final {
        mu = (mu / 10.0).max(mu_final * 0.999);
        for _ in 0..100 {
            let (val, grad, hess) = barrier(&v, mu)?;
            let step = newton_step(&hess, &grad)?;
            let decrement = grad.dot(&step);
            // `step` solves H·step = −g, so gᵀstep = −λ² ≤ 0.
            if decrement.abs() <= 1e-14 * (1.0 + val.abs()) {
                break;
            }
            // Backtrack to a strictly feasible point with sufficient decrease.
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial = &v + &step * t;
                if strictly_feasible(&trial) {
                    let (tv, _, _) = barrier(&trial, mu)?;
                    if tv <= val + 1e-4 * t * decrement {
                        v = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    Ok(v)
}

/// Solves `H·x = −g` with a Cholesky factorization, ridging the diagonal if
/// the Hessian is numerically indefinite.
fn newton_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let n = hess.nrows();
    let base = hess.trace().abs().max(1e-300) / n as f64;
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += ridge;
        }
        if let Some(chol) = Cholesky::new(h) {
            return Ok(chol.solve(&(-grad)));
        }
        ridge = if ridge == 0.0 {
            1e-12 * base
        } else {
            ridge * 100.0
        };
    }
    Err(Error::FactorizationFailure { n })
}

/// `s < 1`: spending the whole surplus on a single point is optimal for the
/// concave work constraint; enumerate the `n+j` such proposals, keep the
/// best, then polish with a projected descent on the budget surface.
fn single_point_heuristic(problem: &AccuracyProblem) -> Result<DVector<f64>> {
    let s = problem.work.exponent();
    let c = problem.work.coefficient();
    let base = problem.work_of(problem.v_lower());
    let surplus = problem.budget - base;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for i in 0..problem.len() {
        let vl = problem.v_lower[i];
        let raised = (surplus / c + vl.powf(s)).powf(1.0 / s);
        let mut v = problem.v_lower.clone();
        v[i] = raised;
        let f = problem.objective.value(&v)?;
        if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
            best = Some((f, v));
        }
    }
    let (_, v) = best.expect("at least one allocation variable");
    surface_descent(problem, v)
}

/// Projected-gradient polish that keeps `v ≥ v̲` and the work budget active.
fn surface_descent(problem: &AccuracyProblem, mut v: DVector<f64>) -> Result<DVector<f64>> {
    v = problem.push_to_budget(&v);
    let mut f = problem.objective.value(&v)?;
    for _ in 0..100 {
        let (_, grad) = problem.objective.value_grad(&v)?;
        let mut dir = -grad;
        for i in 0..v.len() {
            if v[i] - problem.v_lower[i] <= 1e-14 * v[i].max(1.0) && dir[i] < 0.0 {
                dir[i] = 0.0;
            }
        }
        let dir_scale = dir.amax();
        if dir_scale == 0.0 {
            break;
        }
        // Step sized relative to the current allocation magnitude.
        let mut t = 0.5 * v.amax().max(1e-300) / dir_scale;
        let mut improved = false;
        for _ in 0..40 {
            let mut trial = &v + &dir * t;
            for i in 0..trial.len() {
                trial[i] = trial[i].max(problem.v_lower[i]);
            }
            let trial = problem.push_to_budget(&trial);
            let ft = problem.objective.value(&trial)?;
            if ft < f - 1e-14 * f.abs() {
                v = trial;
                f = ft;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(v)
}

/// An evaluation or refinement order produced by a design step.
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluationOrder {
    /// Evaluate a new point at tolerance `eps`.
    New { point: DVector<f64>, eps: f64 },
    /// Refine design point `index` from `eps_old` to `eps_new`.
    Refine {
        index: usize,
        point: DVector<f64>,
        eps_old: f64,
        eps_new: f64,
    },
}

/// The refined design plus the orders needed to realize it.
#[derive(Debug, Clone)]
pub struct AllocationOutcome {
    pub design: Design,
    pub orders: Vec<EvaluationOrder>,
}

/// Turns an allocation `v*` into a refined design and evaluation orders:
/// candidates below the sparsity threshold are discarded, refinements below
/// the 10% significance threshold keep their old tolerance.
pub fn apply_allocation(
    design: &Design,
    candidates: &CandidateSet,
    v_star: &DVector<f64>,
) -> Result<AllocationOutcome> {
    let n = design.len();
    if v_star.len() != n + candidates.len() {
        return Err(Error::config(
            "allocation length must cover design points and candidates",
        ));
    }
    let v_sparse = SPARSITY_REL * v_star.amax();
    let mut refined = design.clone();
    let mut orders = Vec::new();
    for i in 0..n {
        let eps_old = design.tolerance(i);
        if v_star[i] <= 0.0 {
            continue;
        }
        let eps_new = v_star[i].powf(-0.5);
        if eps_new >= eps_old || (eps_old - eps_new) / eps_old < SIGNIFICANCE_REL {
            continue;
        }
        refined.tighten(i, eps_new)?;
        orders.push(EvaluationOrder::Refine {
            index: i,
            point: design.point(i).clone(),
            eps_old,
            eps_new,
        });
    }
    for (j, p) in candidates.points.iter().enumerate() {
        let v = v_star[n + j];
        if v <= v_sparse {
            continue;
        }
        let eps = v.powf(-0.5);
        refined.push(p.clone(), eps)?;
        orders.push(EvaluationOrder::New {
            point: p.clone(),
            eps,
        });
    }
    Ok(AllocationOutcome {
        design: refined,
        orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{DomainBox, TrainingData};
    use crate::error_model::{global_error, global_error_gradient, ErrorModelConfig};
    use crate::kernel::Hyperparameters;

    fn dv(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn table_1d(nodes: &[f64], weights: &[f64]) -> NodeTable {
        NodeTable::from_parts(
            nodes.iter().map(|&x| dv(&[x])).collect(),
            weights.to_vec(),
            vec![1.0; nodes.len()],
            1.0,
            2.0,
        )
    }

    #[test]
    fn halton_candidates_follow_the_sequence() {
        let domain = DomainBox::new(dv(&[0.0, 0.0]), dv(&[2.0, 3.0])).unwrap();
        let design = Design::new(domain);
        let table = table_1d(&[0.5], &[1.0]); // unused by the Halton strategy
        let mut gen = CandidateGenerator::new(CandidateStrategy::Halton, 2, 7);
        let set = gen.generate(&design, &table, 3).unwrap();
        let expected = [
            dv(&[2.0 / 2.0, 3.0 / 3.0]),
            dv(&[2.0 / 4.0, 3.0 * 2.0 / 3.0]),
            dv(&[2.0 * 3.0 / 4.0, 3.0 / 9.0]),
        ];
        for (p, e) in set.points().iter().zip(&expected) {
            assert!((p - e).norm() < 1e-14, "{p:?} vs {e:?}");
            assert_eq!(set.provenance(0), Provenance::Halton);
        }
        // The skip counter persists: the next call continues the sequence.
        let next = gen.generate(&design, &table, 1).unwrap();
        assert!((next.point(0) - dv(&[2.0 / 8.0, 3.0 * 4.0 / 9.0])).norm() < 1e-14);
    }

    #[test]
    fn acquisition_ranks_by_density_with_low_index_ties() {
        let design = Design::new(DomainBox::unit(1));
        let table = table_1d(&[0.1, 0.3, 0.5, 0.7], &[1.0, 2.0, 2.0, 1.0]);
        let mut gen = CandidateGenerator::new(CandidateStrategy::Acquisition, 1, 0);
        let set = gen.generate(&design, &table, 2).unwrap();
        assert!((set.point(0)[0] - 0.3).abs() < 1e-15);
        assert!((set.point(1)[0] - 0.5).abs() < 1e-15);
        // Constant density: the lowest node index wins.
        let flat = table_1d(&[0.1, 0.3, 0.5], &[1.0, 1.0, 1.0]);
        let one = gen.generate(&design, &flat, 1).unwrap();
        assert!((one.point(0)[0] - 0.1).abs() < 1e-15);
        assert_eq!(one.provenance(0), Provenance::AcquisitionArgmax);
    }

    #[test]
    fn acquisition_skips_nodes_colliding_with_the_design() {
        let mut design = Design::new(DomainBox::unit(1));
        design.push(dv(&[0.1]), 0.1).unwrap();
        let table = table_1d(&[0.1, 0.3, 0.5, 0.7], &[9.0, 5.0, 3.0, 1.0]);
        let mut gen = CandidateGenerator::new(CandidateStrategy::Acquisition, 1, 0);
        let set = gen.generate(&design, &table, 1).unwrap();
        assert!((set.point(0)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn exhausted_when_no_admissible_node_remains() {
        let mut design = Design::new(DomainBox::unit(1));
        design.push(dv(&[0.1]), 0.1).unwrap();
        design.push(dv(&[0.3]), 0.1).unwrap();
        let table = table_1d(&[0.1, 0.3], &[1.0, 2.0]);
        let mut gen = CandidateGenerator::new(CandidateStrategy::Acquisition, 1, 0);
        let err = gen.generate(&design, &table, 1).unwrap_err();
        assert!(matches!(err, Error::ExhaustedCandidates { .. }));
    }

    #[test]
    fn random_candidates_are_admissible_and_reproducible() {
        let mut design = Design::new(DomainBox::unit(2));
        design.push(dv(&[0.5, 0.5]), 0.1).unwrap();
        let table = table_1d(&[0.5], &[1.0]);
        let delta = design.min_separation();
        let mut gen = CandidateGenerator::new(CandidateStrategy::Random, 2, 11);
        let set = gen.generate(&design, &table, 5).unwrap();
        assert_eq!(set.len(), 5);
        for (i, p) in set.points().iter().enumerate() {
            assert!(design.domain().contains(p));
            assert!(design.nearest_distance(p) >= delta);
            for q in &set.points()[..i] {
                assert!((p - q).norm() >= delta);
            }
        }
        let mut gen2 = CandidateGenerator::new(CandidateStrategy::Random, 2, 11);
        let set2 = gen2.generate(&design, &table, 5).unwrap();
        for (p, q) in set.points().iter().zip(set2.points()) {
            assert_eq!(p, q);
        }
        let mut gen3 = CandidateGenerator::new(CandidateStrategy::Random, 2, 12);
        let set3 = gen3.generate(&design, &table, 5).unwrap();
        assert_ne!(set.point(0), set3.point(0));
    }

    /// A candidate right next to an ultra-accurate design point cannot reduce
    /// the error estimate; one in a data-free region can.
    #[test]
    fn filter_drops_shadowed_candidates_and_keeps_informative_ones() {
        let domain = DomainBox::unit(1);
        let mut train = TrainingData::new(domain, 1).unwrap();
        train.push(dv(&[0.2]), 1e-6, dv(&[0.3])).unwrap();
        train.push(dv(&[0.45]), 1e-2, dv(&[0.8])).unwrap();
        let hyper = Hyperparameters::new(1.0, dv(&[0.3])).unwrap();
        let model = SurrogateModel::fit(train, hyper).unwrap();
        let cfg = ErrorModelConfig::default();
        let sigma_l = dv(&[0.01]);
        let (_, table) = global_error(&model, &sigma_l, &cfg).unwrap();

        let shadowed = dv(&[0.2005]);
        let informative = dv(&[0.9]);
        let design = model.train().design();
        let mut points = design.points().to_vec();
        points.extend([shadowed.clone(), informative.clone()]);
        let v_lower = lower_bounds(design, 2);
        let grad = global_error_gradient(&model, &sigma_l, &cfg, &points, &v_lower).unwrap();
        let (g_shadowed, g_informative) = (grad[2].abs(), grad[3].abs());
        assert!(
            g_shadowed < 1e-3 * g_informative,
            "shadowed {g_shadowed:e} vs informative {g_informative:e}"
        );

        let mut set = CandidateSet::default();
        set.push(shadowed, Provenance::Random);
        set.push(informative.clone(), Provenance::Random);
        let tol = (g_shadowed * g_informative).sqrt();
        let kept =
            filter_candidates(set.clone(), &model, &table, cfg.epsilon_mode, Some(tol)).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.point(0), &informative);
        // A zero threshold filters nothing.
        let all = filter_candidates(set, &model, &table, cfg.epsilon_mode, Some(0.0)).unwrap();
        assert_eq!(all.len(), 2);
    }

    fn symmetric_problem(s: f64, budget: f64) -> AccuracyProblem {
        let nodes: Vec<f64> = (0..8).map(|i| (2.0 * i as f64 + 1.0) / 16.0).collect();
        let table = table_1d(&nodes, &[1.0; 8]);
        let hyper = Hyperparameters::new(1.0, dv(&[0.2])).unwrap();
        let points = vec![dv(&[0.3]), dv(&[0.7])];
        let objective = AccuracyObjective::new(&hyper, &points, &table, 1, EpsilonMode::Trace);
        AccuracyProblem::new(
            objective,
            dv(&[0.0, 0.0]),
            WorkModel::generic(s).unwrap(),
            budget,
        )
        .unwrap()
    }

    #[test]
    fn symmetric_candidates_receive_equal_allocation() {
        let problem = symmetric_problem(2.0, 8.0);
        let v = allocate_accuracy(&problem).unwrap();
        // Activity: Σ vᵢ² = 8, and by symmetry v₁ = v₂ = 2.
        assert!(
            (v[0] - v[1]).abs() <= 1e-6 * v[0].abs(),
            "asymmetric: {v:?}"
        );
        assert!((problem.work_of(&v) - 8.0).abs() <= 1e-8 * 8.0);
        assert!((v[0] - 2.0).abs() < 1e-4, "{v:?}");
        let e_lower = problem.objective().value(problem.v_lower()).unwrap();
        let e_star = problem.objective().value(&v).unwrap();
        assert!(e_star <= e_lower);
    }

    #[test]
    fn two_starts_agree_and_satisfy_kkt() {
        let nodes: Vec<f64> = (0..10).map(|i| (2.0 * i as f64 + 1.0) / 20.0).collect();
        let weights: Vec<f64> = (0..10).map(|i| 0.3 + 0.2 * i as f64).collect();
        let table = table_1d(&nodes, &weights);
        let hyper = Hyperparameters::new(0.8, dv(&[0.25])).unwrap();
        let points = vec![dv(&[0.15]), dv(&[0.55]), dv(&[0.85])];
        let objective = AccuracyObjective::new(&hyper, &points, &table, 2, EpsilonMode::Trace);
        let problem = AccuracyProblem::new(
            objective,
            dv(&[25.0, 0.0, 0.0]),
            WorkModel::generic(1.0).unwrap(),
            80.0,
        )
        .unwrap();
        let a = allocate_accuracy(&problem).unwrap();
        let lopsided = {
            let mut v = problem.v_lower().clone();
            v[0] += 40.0;
            v[1] += 1.0;
            v[2] += 2.0;
            v
        };
        let b = allocate_accuracy_from(&problem, &lopsided).unwrap();
        let scale = a.amax();
        for i in 0..a.len() {
            assert!(
                (a[i] - b[i]).abs() <= 1e-6 * scale,
                "starts disagree at {i}: {a:?} vs {b:?}"
            );
        }
        assert!(problem.kkt_residual(&a).unwrap() <= 1e-8);
        assert!((problem.work_of(&a) - 80.0).abs() <= 1e-8 * 80.0);
    }

    #[test]
    fn concave_work_concentrates_spend_on_the_best_point() {
        let nodes: Vec<f64> = (0..10).map(|i| (2.0 * i as f64 + 1.0) / 20.0).collect();
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| if x < 0.5 { 5.0 } else { 0.05 })
            .collect();
        let table = table_1d(&nodes, &weights);
        let hyper = Hyperparameters::new(1.0, dv(&[0.15])).unwrap();
        let points = vec![dv(&[0.25]), dv(&[0.85])];
        let objective = AccuracyObjective::new(&hyper, &points, &table, 1, EpsilonMode::Trace);
        let problem = AccuracyProblem::new(
            objective,
            dv(&[0.0, 0.0]),
            WorkModel::generic(0.5).unwrap(),
            4.0,
        )
        .unwrap();
        // The two single-point proposals, by hand: a = budget^{1/s} = 16.
        let f_a = problem.objective().value(&dv(&[16.0, 0.0])).unwrap();
        let f_b = problem.objective().value(&dv(&[0.0, 16.0])).unwrap();
        assert!(f_a < f_b, "high-weight proposal must win: {f_a} vs {f_b}");
        let v = allocate_accuracy(&problem).unwrap();
        assert!(v[0] > v[1], "{v:?}");
        assert!((problem.work_of(&v) - 4.0).abs() <= 1e-8 * 4.0);
        let f_star = problem.objective().value(&v).unwrap();
        assert!(f_star <= f_a + 1e-12);
    }

    #[test]
    fn infeasible_budget_rejected_at_the_boundary() {
        let table = table_1d(&[0.25, 0.75], &[1.0, 1.0]);
        let hyper = Hyperparameters::new(1.0, dv(&[0.3])).unwrap();
        let points = vec![dv(&[0.4])];
        let make = |budget: f64| {
            let objective = AccuracyObjective::new(&hyper, &points, &table, 1, EpsilonMode::Trace);
            AccuracyProblem::new(
                objective,
                dv(&[100.0]),
                WorkModel::generic(1.0).unwrap(),
                budget,
            )
            .unwrap()
        };
        // Budget exactly equal to the sunk work: nothing can be refined.
        let err = allocate_accuracy(&make(100.0)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBudget { .. }));
        // Any strictly positive surplus flows to the existing point.
        let v = allocate_accuracy(&make(101.0)).unwrap();
        assert!((v[0] - 101.0).abs() <= 1e-6 * 101.0, "{v:?}");
    }

    #[test]
    fn apply_allocation_refines_significantly_and_discards_sparse() {
        let mut design = Design::new(DomainBox::unit(1));
        design.push(dv(&[0.2]), 0.1).unwrap();
        design.push(dv(&[0.6]), 0.1).unwrap();
        let mut candidates = CandidateSet::default();
        candidates.push(dv(&[0.9]), Provenance::Random);
        // Point 0 doubles its information; point 1 changes ε by < 10%;
        // the candidate stays at (numerically) zero.
        let v = dv(&[200.0, 115.0, 1e-9]);
        let outcome = apply_allocation(&design, &candidates, &v).unwrap();
        assert_eq!(outcome.design.len(), 2);
        assert_eq!(outcome.orders.len(), 1);
        match &outcome.orders[0] {
            EvaluationOrder::Refine {
                index,
                eps_old,
                eps_new,
                ..
            } => {
                assert_eq!(*index, 0);
                assert!((eps_old - 0.1).abs() < 1e-15);
                assert!((eps_new - 200f64.powf(-0.5)).abs() < 1e-15);
            }
            other => panic!("expected refinement, got {other:?}"),
        }
        assert!((outcome.design.tolerance(1) - 0.1).abs() < 1e-15);

        // A candidate with substantial allocation becomes a new evaluation.
        let v = dv(&[100.0, 100.0, 2.5e5]);
        let outcome = apply_allocation(&design, &candidates, &v).unwrap();
        assert_eq!(outcome.design.len(), 3);
        assert_eq!(outcome.orders.len(), 1);
        match &outcome.orders[0] {
            EvaluationOrder::New { point, eps } => {
                assert_eq!(point, &dv(&[0.9]));
                assert!((eps - 2.5e5f64.powf(-0.5)).abs() < 1e-15);
            }
            other => panic!("expected new evaluation, got {other:?}"),
        }
    }

    #[test]
    fn realized_work_increment_respects_the_budget() {
        let mut design = Design::new(DomainBox::unit(1));
        design.push(dv(&[0.2]), 0.1).unwrap();
        design.push(dv(&[0.6]), 0.08).unwrap();
        let mut candidates = CandidateSet::default();
        candidates.push(dv(&[0.9]), Provenance::Random);
        let nodes: Vec<f64> = (0..12).map(|i| (2.0 * i as f64 + 1.0) / 24.0).collect();
        let table = table_1d(&nodes, &[1.0; 12]);
        let hyper = Hyperparameters::new(1.0, dv(&[0.25])).unwrap();
        let mut points = design.points().to_vec();
        points.extend(candidates.points().iter().cloned());
        let objective = AccuracyObjective::new(&hyper, &points, &table, 1, EpsilonMode::Trace);
        let work = WorkModel::generic(1.0).unwrap();
        let v_lower = lower_bounds(&design, 1);
        let delta_w = 50.0;
        let budget = v_lower.iter().map(|&v| work.work_of_v(v)).sum::<f64>() + delta_w;
        let problem = AccuracyProblem::new(objective, v_lower, work, budget).unwrap();
        let v = allocate_accuracy(&problem).unwrap();
        let outcome = apply_allocation(&design, &candidates, &v).unwrap();
        let realized = work.design_work(&outcome.design) - work.design_work(&design);
        assert!(realized >= 0.0);
        assert!(
            realized <= delta_w * (1.0 + 1e-6),
            "increment {realized} exceeds ΔW {delta_w}"
        );
    }
}
