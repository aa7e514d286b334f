//! Squared-exponential kernel and its hyperparameters.
//!
//! The covariance between two parameter points is
//!
//! ```text
//! k(p, p′) = σ_f² · exp(−½ (p−p′)ᵀ L⁻¹ (p−p′)),   L = diag(l₁², …, l_d²),
//! ```
//!
//! with signal variance `σ_f²` and one lengthscale per coordinate. The
//! hyperparameter vector is packed as `[σ_f², l₁, …, l_d]` and every entry is
//! constrained to a positive box.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Packed-order index of the signal variance in a hyperparameter vector.
pub const SIGNAL_IDX: usize = 0;

/// Box bounds for a packed hyperparameter vector `[σ_f², l₁…l_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl HyperBounds {
    /// Validates elementwise `0 < lower ≤ upper`.
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::config("hyperparameter bounds must match in length"));
        }
        for i in 0..lower.len() {
            if !(lower[i] > 0.0 && lower[i].is_finite() && upper[i].is_finite())
                || lower[i] > upper[i]
            {
                return Err(Error::config(format!(
                    "hyperparameter bounds invalid at entry {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(HyperBounds { lower, upper })
    }

    /// A practically unconstrained positive box for `d` lengthscales.
    pub fn unbounded(d: usize) -> Self {
        HyperBounds {
            lower: DVector::from_element(d + 1, 1e-150),
            upper: DVector::from_element(d + 1, 1e150),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, h: &DVector<f64>) -> bool {
        h.len() == self.len()
            && (0..h.len()).all(|i| h[i] >= self.lower[i] && h[i] <= self.upper[i])
    }

    /// Clamps a packed vector into the box.
    pub fn clamp(&self, h: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(h.len(), |i, _| h[i].clamp(self.lower[i], self.upper[i]))
    }
}

/// Kernel hyperparameters with their box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    signal_variance: f64,
    lengthscales: DVector<f64>,
    bounds: HyperBounds,
}

impl Hyperparameters {
    /// Creates hyperparameters with effectively unconstrained bounds.
    pub fn new(signal_variance: f64, lengthscales: DVector<f64>) -> Result<Self> {
        let bounds = HyperBounds::unbounded(lengthscales.len());
        Self::with_bounds(signal_variance, lengthscales, bounds)
    }

    /// Creates hyperparameters inside an explicit box.
    pub fn with_bounds(
        signal_variance: f64,
        lengthscales: DVector<f64>,
        bounds: HyperBounds,
    ) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::config("at least one lengthscale required"));
        }
        if bounds.len() != lengthscales.len() + 1 {
            return Err(Error::config(
                "bounds length must be d+1 (signal + lengthscales)",
            ));
        }
        let h = Self {
            signal_variance,
            lengthscales,
            bounds,
        };
        let packed = h.packed();
        if packed.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("hyperparameters must be positive and finite"));
        }
        if !h.bounds.contains(&packed) {
            return Err(Error::config("hyperparameters outside their box bounds"));
        }
        Ok(h)
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn lengthscales(&self) -> &DVector<f64> {
        &self.lengthscales
    }

    pub fn bounds(&self) -> &HyperBounds {
        &self.bounds
    }

    /// Input dimension `d`.
    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Packs as `[σ_f², l₁…l_d]`.
    pub fn packed(&self) -> DVector<f64> {
        let mut h = DVector::zeros(self.dim() + 1);
        h[SIGNAL_IDX] = self.signal_variance;
        for i in 0..self.dim() {
            h[i + 1] = self.lengthscales[i];
        }
        h
    }

    /// Rebuilds from a packed vector, keeping `bounds`.
    pub fn from_packed(h: &DVector<f64>, bounds: HyperBounds) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::config("packed hyperparameters need ≥ 2 entries"));
        }
        Self::with_bounds(h[SIGNAL_IDX], h.rows(1, h.len() - 1).into_owned(), bounds)
    }

    /// Kernel value `k(a, b)`.
    pub fn kernel(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut q = 0.0;
        for i in 0..self.dim() {
            let delta = (a[i] - b[i]) / self.lengthscales[i];
            q += delta * delta;
        }
        self.signal_variance * (-0.5 * q).exp()
    }

    /// Gradient of `k(a, b)` with respect to the first argument:
    /// `∂k/∂a = −L⁻¹ (a−b) · k(a, b)`.
    pub fn kernel_grad_point(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let k = self.kernel(a, b);
        DVector::from_fn(self.dim(), |i, _| {
            -(a[i] - b[i]) / (self.lengthscales[i] * self.lengthscales[i]) * k
        })
    }

    /// Gradient of `k(a, b)` with respect to the packed hyperparameters:
    /// `∂k/∂σ_f² = k/σ_f²` and `∂k/∂lᵢ = k · Δᵢ²/lᵢ³`.
    pub fn kernel_grad_hyper(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let k = self.kernel(a, b);
        let mut g = DVector::zeros(self.dim() + 1);
        g[SIGNAL_IDX] = k / self.signal_variance;
        for i in 0..self.dim() {
            let delta = a[i] - b[i];
            let l = self.lengthscales[i];
            g[i + 1] = k * delta * delta / (l * l * l);
        }
        g
    }

    /// Dense kernel matrix over a point set.
    pub fn kernel_matrix(&self, pts: &[DVector<f64>]) -> DMatrix<f64> {
        let n = pts.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.signal_variance;
            for j in 0..i {
                let v = self.kernel(&pts[i], &pts[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross-covariance vector `k(P, q)` between a point set and a query.
    pub fn kernel_cross(&self, pts: &[DVector<f64>], q: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(pts.len(), |i, _| self.kernel(&pts[i], q))
    }
}
