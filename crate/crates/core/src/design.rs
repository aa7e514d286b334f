//! Parameter domain, evaluation designs, and training data.
//!
//! A *design* is a finite set of parameter points, each tagged with the
//! evaluation tolerance at which the forward model has been (or is to be)
//! simulated there. Designs are the decision variable of the experiment-design
//! problem; training data pairs a design with the simulated outputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative minimum pairwise separation between design points, as a fraction
/// of the domain-box diagonal. Points closer than this destabilize the kernel
/// matrix and are rejected.
pub const MIN_SEPARATION_REL: f64 = 1e-4;

/// An axis-aligned box `[lb, ub] ⊂ ℝᵈ`, the admissible parameter region.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lb: DVector<f64>,
    ub: DVector<f64>,
}

impl DomainBox {
    /// Creates a box from elementwise bounds; every coordinate must satisfy
    /// `lb < ub` and be finite.
    pub fn new(lb: DVector<f64>, ub: DVector<f64>) -> Result<Self> {
        if lb.is_empty() || lb.len() != ub.len() {
            return Err(Error::config("domain box needs matching, non-empty bounds"));
        }
        for i in 0..lb.len() {
            if !lb[i].is_finite() || !ub[i].is_finite() || lb[i] >= ub[i] {
                return Err(Error::config(format!(
                    "domain box bounds invalid in coordinate {i}: [{}, {}]",
                    lb[i], ub[i]
                )));
            }
        }
        Ok(DomainBox { lb, ub })
    }

    /// The unit box `[0,1]^d`.
    pub fn unit(d: usize) -> Self {
        DomainBox {
            lb: DVector::zeros(d),
            ub: DVector::from_element(d, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lb
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.ub
    }

    /// Per-coordinate widths `ub − lb`.
    pub fn width(&self) -> DVector<f64> {
        &self.ub - &self.lb
    }

    /// Box volume `∏ (ubᵢ − lbᵢ)`.
    pub fn volume(&self) -> f64 {
        self.width().iter().product()
    }

    /// Euclidean length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.width().norm()
    }

    /// Center point of the box.
    pub fn center(&self) -> DVector<f64> {
        (&self.lb + &self.ub) * 0.5
    }

    /// Whether `p` lies in the closed box, with a small relative slack to
    /// absorb round-off from projections.
    pub fn contains(&self, p: &DVector<f64>) -> bool {
        if p.len() != self.dim() {
            return false;
        }
        (0..self.dim()).all(|i| {
            let slack = 1e-12 * (self.ub[i] - self.lb[i]);
            p[i] >= self.lb[i] - slack && p[i] <= self.ub[i] + slack
        })
    }

    /// Clamps `p` onto the box.
    pub fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| p[i].clamp(self.lb[i], self.ub[i]))
    }

    /// Maps a point in `[0,1]^d` affinely into the box.
    pub fn from_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            self.lb[i] + u[i] * (self.ub[i] - self.lb[i])
        })
    }
}

/// A set of evaluation points with per-point tolerances, all inside a domain box.
#[derive(Debug, Clone)]
pub struct Design {
    domain: DomainBox,
    points: Vec<DVector<f64>>,
    tolerances: Vec<f64>,
}

impl Design {
    pub fn new(domain: DomainBox) -> Self {
        Design {
            domain,
            points: Vec::new(),
            tolerances: Vec::new(),
        }
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

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

    pub fn tolerance(&self, i: usize) -> f64 {
        self.tolerances[i]
    }

    pub fn tolerances(&self) -> &[f64] {
        &self.tolerances
    }

    /// The minimum admissible distance between two design points.
    pub fn min_separation(&self) -> f64 {
        MIN_SEPARATION_REL * self.domain.diagonal()
    }

    /// Distance from `p` to the nearest design point (∞ when empty).
    pub fn nearest_distance(&self, p: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|q| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Appends a point with its tolerance, enforcing the domain, separation,
    /// and tolerance invariants. Returns the new point's index.
    pub fn push(&mut self, p: DVector<f64>, eps: f64) -> Result<usize> {
        if !self.domain.contains(&p) {
            return Err(Error::DomainViolation);
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::config(format!(
                "tolerance must be positive, got {eps}"
            )));
        }
        if self.nearest_distance(&p) < self.min_separation() {
            return Err(Error::config(
                "new design point is too close to an existing point",
            ));
        }
        self.points.push(p);
        self.tolerances.push(eps);
        Ok(self.points.len() - 1)
    }

    /// Tightens the tolerance of point `i` to `eps_new < εᵢ`.
    pub fn tighten(&mut self, i: usize, eps_new: f64) -> Result<()> {
        let current = self.tolerances[i];
        if !(eps_new.is_finite() && eps_new > 0.0) || eps_new >= current {
            return Err(Error::RefinementOrderViolation {
                requested: eps_new,
                current,
            });
        }
        self.tolerances[i] = eps_new;
        Ok(())
    }
}

/// A design together with the simulated outputs `ŷ ∈ ℝ^{n×m}` at its points.
#[derive(Debug, Clone)]
pub struct TrainingData {
    design: Design,
    values: DMatrix<f64>,
    output_dim: usize,
}

impl TrainingData {
    /// An empty training set for `m`-dimensional model output.
    pub fn new(domain: DomainBox, output_dim: usize) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::config("output dimension must be ≥ 1"));
        }
        Ok(TrainingData {
            design: Design::new(domain),
            values: DMatrix::zeros(0, output_dim),
            output_dim,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n(&self) -> usize {
        self.design.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// The `n×m` matrix of simulated outputs, row `i` belonging to point `i`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Appends one evaluated point. Returns its index.
    pub fn push(&mut self, p: DVector<f64>, eps: f64, y: DVector<f64>) -> Result<usize> {
        if y.len() != self.output_dim {
            return Err(Error::config(format!(
                "value has {} components, expected {}",
                y.len(),
                self.output_dim
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("simulated values must be finite"));
        }
        let idx = self.design.push(p, eps)?;
        self.values = self.values.clone().insert_row(idx, 0.0);
        for j in 0..self.output_dim {
            self.values[(idx, j)] = y[j];
        }
        Ok(idx)
    }

    /// Replaces point `i`'s value with a re-simulation at a tighter tolerance.
    pub fn refine(&mut self, i: usize, eps_new: f64, y_new: DVector<f64>) -> Result<()> {
        if y_new.len() != self.output_dim {
            return Err(Error::config(format!(
                "value has {} components, expected {}",
                y_new.len(),
                self.output_dim
            )));
        }
        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("simulated values must be finite"));
        }
        self.design.tighten(i, eps_new)?;
        for j in 0..self.output_dim {
            self.values[(i, j)] = y_new[j];
        }
        Ok(())
    }
}
