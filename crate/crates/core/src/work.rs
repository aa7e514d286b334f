//! Work models and the incremental budget controller.
//!
//! A work model maps an evaluation tolerance to its computational cost,
//! `W(ε) = c·ε^{−2s}` — equivalently `W(v) = c·v^s` in the information
//! variable `v = ε^{−2}`. The exponent `s` encodes the solver's convergence
//! behaviour; the constant `c` merely fixes units. Per-evaluation work is
//! floored at `W_min` because even the coarsest simulation is not free.

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// Tolerance-to-cost model `W(ε) = max(c·ε^{−2s}, W_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkModel {
    exponent: f64,
    coefficient: f64,
    floor: f64,
}

impl WorkModel {
    /// Generic model `W(ε) = ε^{−2s}` with unit coefficient and floor.
    pub fn generic(s: f64) -> Result<Self> {
        Self::with_parts(s, 1.0, 1.0)
    }

    /// Finite-element flavour for elements of order `r` in `d` spatial
    /// dimensions with an optimal-complexity solver:
    /// `W(ε) = (r/d)·ε^{−d/r}`, i.e. `s = d/(2r)`.
    pub fn finite_element(order: u32, spatial_dim: u32) -> Result<Self> {
        if order == 0 || spatial_dim == 0 {
            return Err(Error::config(
                "finite-element work model needs r ≥ 1, d ≥ 1",
            ));
        }
        let r = f64::from(order);
        let d = f64::from(spatial_dim);
        Self::with_parts(d / (2.0 * r), r / d, 1.0)
    }

    /// Sparse-direct-solver flavour: `W(ε) = (r/(1.5d))·ε^{−1.5d/r}`,
    /// i.e. `s = 0.75·d/r`.
    pub fn sparse_direct(order: u32, spatial_dim: u32) -> Result<Self> {
        if order == 0 || spatial_dim == 0 {
            return Err(Error::config("sparse-direct work model needs r ≥ 1, d ≥ 1"));
        }
        let r = f64::from(order);
        let d = f64::from(spatial_dim);
        Self::with_parts(0.75 * d / r, r / (1.5 * d), 1.0)
    }

    fn with_parts(s: f64, coefficient: f64, floor: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::config(format!(
                "work exponent must be positive, got {s}"
            )));
        }
        if !(coefficient.is_finite() && coefficient > 0.0) {
            return Err(Error::config("work coefficient must be positive"));
        }
        Ok(WorkModel {
            exponent: s,
            coefficient,
            floor,
        })
    }

    /// The exponent `s` of `W(v) = c·v^s`.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    /// Minimum charge per evaluation.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Work charged for one evaluation at tolerance `ε` (floored).
    pub fn work_of_tolerance(&self, eps: f64) -> f64 {
        (self.coefficient * eps.powf(-2.0 * self.exponent)).max(self.floor)
    }

    /// Smooth work `c·v^s` in the information variable `v = ε^{−2}` (no floor);
    /// this is the form the accuracy-allocation solver optimizes.
    pub fn work_of_v(&self, v: f64) -> f64 {
        self.coefficient * v.powf(self.exponent)
    }

    /// Derivative `d(c·v^s)/dv = c·s·v^{s−1}`.
    pub fn work_of_v_grad(&self, v: f64) -> f64 {
        self.coefficient * self.exponent * v.powf(self.exponent - 1.0)
    }

    /// Second derivative `c·s·(s−1)·v^{s−2}`.
    pub fn work_of_v_hess(&self, v: f64) -> f64 {
        self.coefficient * self.exponent * (self.exponent - 1.0) * v.powf(self.exponent - 2.0)
    }

    /// Total (floored) work of a design.
    pub fn design_work(&self, design: &Design) -> f64 {
        design
            .tolerances()
            .iter()
            .map(|&e| self.work_of_tolerance(e))
            .sum()
    }

    /// Continuation credit `W(D′|D) = W(D′) − W(D)` for a refinement `D′ ≤ D`:
    /// `D′` must contain `D`'s points first, with tolerances no looser.
    pub fn incremental_work(&self, refined: &Design, base: &Design) -> Result<f64> {
        if refined.len() < base.len() {
            return Err(Error::config(
                "refined design must contain the base design's points",
            ));
        }
        for i in 0..base.len() {
            if refined.point(i) != base.point(i) {
                return Err(Error::config(
                    "refined design must keep the base points in place",
                ));
            }
            if refined.tolerance(i) > base.tolerance(i) {
                return Err(Error::RefinementOrderViolation {
                    requested: refined.tolerance(i),
                    current: base.tolerance(i),
                });
            }
        }
        Ok(self.design_work(refined) - self.design_work(base))
    }
}

/// Multiplicative schedule for the per-iteration work increment ΔW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetController {
    delta_w: f64,
    growth: f64,
    stall_factor: f64,
    stall_threshold: f64,
}

impl BudgetController {
    /// Default schedule: ΔW₀ = 100, 10% growth per iteration, an extra 10%
    /// when the relative error improvement drops below 2%.
    pub fn new(delta_w0: f64) -> Result<Self> {
        Self::with_schedule(delta_w0, 1.1, 1.1, 0.02)
    }

    pub fn with_schedule(
        delta_w0: f64,
        growth: f64,
        stall_factor: f64,
        stall_threshold: f64,
    ) -> Result<Self> {
        if !(delta_w0.is_finite() && delta_w0 > 0.0) {
            return Err(Error::config("initial budget increment must be positive"));
        }
        if growth < 1.0 || stall_factor < 1.0 {
            return Err(Error::config("budget growth factors must be ≥ 1"));
        }
        Ok(BudgetController {
            delta_w: delta_w0,
            growth,
            stall_factor,
            stall_threshold,
        })
    }

    /// Current increment ΔW.
    pub fn delta_w(&self) -> f64 {
        self.delta_w
    }

    /// Advances the schedule after an iteration: always grow by the base
    /// factor; grow again when progress stalled, i.e. when the relative error
    /// improvement `(E_prev − E_now)/E_prev` fell below the stall threshold.
    /// `E_prev = 0` is guarded as non-stalled.
    pub fn budget_step(&mut self, e_prev: f64, e_now: f64) -> f64 {
        self.delta_w *= self.growth;
        if e_prev > 0.0 && (e_prev - e_now) / e_prev < self.stall_threshold {
            self.delta_w *= self.stall_factor;
        }
        self.delta_w
    }
}
