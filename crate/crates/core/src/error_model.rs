//! Goal-oriented error quantification for surrogate-based parameter
//! identification.
//!
//! The quantity of interest is not the surrogate's pointwise accuracy but the
//! error it induces in the reconstructed parameter. Surrogate error `ε(p)`
//! transports into parameter error approximately linearly through one
//! Gauss-Newton step, with factor
//!
//! ```text
//! w̃(p) = ‖(f′ᵀ Σ_l⁻¹ f′ + λI)⁻¹ f′ᵀ Σ_l⁻¹‖₂,     f′ = ∂µ/∂p,
//! ```
//!
//! giving the local error density `g(p) = w̃(p)·ε(p)` and the global functional
//!
//! ```text
//! E = ( vol(𝒳)/N · Σ_nodes w̃(pᵢ)^q ε(pᵢ)^q )^{1/q}
//! ```
//!
//! over integration nodes (equidistant cell-center grid or Monte Carlo).
//!
//! For accuracy allocation the same functional is viewed in the variables
//! `v = ε⁻²` (one per design point): with `S = diag(√v)` and `B = S K S + I`
//! the predictive variance at a node is `σ_v²(x) = k_xx − (Sk_x)ᵀ B⁻¹ (Sk_x)`,
//! a form that stays well-defined down to `v = 0` (a point carrying no
//! information). Its first and second derivatives in `v` are rank-structured,
//!
//! ```text
//! ∂σ²/∂vᵢ = −a[i]²,        a = k_x − K S B⁻¹ S k_x,
//! ∂²σ²/∂vᵢ∂vⱼ = 2 a[i] a[j] Â[i,j],   Â = K − K S B⁻¹ S K,
//! ```
//!
//! so one factorization of `B` per allocation iterate serves every node, and
//! `Σ_nodes w̃^q ε^q` gets exact gradients and Hessians for Newton-type
//! allocation solvers. For `q = 2` the objective is a positive combination of
//! the convex functions `σ_v²`, hence convex in `v`.
//!
//! A second, constants-based weight path (`w(p)` built from derivative bounds
//! `C₁`, `C₂` and the stability eigenvalue `L_min`) exists for validating the
//! pointwise reconstruction-error bound on analytic models where those
//! constants are computable; practical runs use the data-driven `w̃`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DomainBox;
use crate::error::{Error, Result};
use crate::gp::SurrogateModel;
use crate::kernel::Hyperparameters;

/// Relative factor for the default transport regularization
/// `λ = 1e−8·‖f′ᵀΣ_l⁻¹f′‖₂`.
const RELATIVE_LAMBDA: f64 = 1e-8;

/// How per-component predictive deviations combine into the scalar `ε(p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    /// `ε^q = Σⱼ σⱼ^q` (mean of the generalized χ² distribution).
    Trace,
    /// `ε = sqrt(m(1−2/(9m))³)·‖σ‖₂` (χ-distribution median surrogate).
    ChiMedian,
}

/// Where the global-error integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationSpec {
    /// Tensor grid of cell centers, `per_axis^d` nodes (midpoint rule).
    Grid { per_axis: usize },
    /// Uniform Monte Carlo nodes drawn from `seed` (identical every call, so
    /// one run integrates against one fixed quadrature).
    MonteCarlo { count: usize, seed: u64 },
}

/// Configuration of the error functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModelConfig {
    /// Norm exponent of the `L^q` functional (`q ≥ 2`).
    pub q: f64,
    /// Relative-error weight `α ≥ 0` in the constants-based weight.
    pub alpha: f64,
    /// Derivative proportionality `β ≥ 0` (`ε′ = β·ε`) in the constants-based weight.
    pub beta: f64,
    /// Transport regularization; `None` selects the relative default
    /// `1e−8·‖f′ᵀΣ_l⁻¹f′‖₂`.
    pub lambda: Option<f64>,
    pub epsilon_mode: EpsilonMode,
    pub integration: IntegrationSpec,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        ErrorModelConfig {
            q: 2.0,
            alpha: 0.0,
            beta: 0.0,
            lambda: None,
            epsilon_mode: EpsilonMode::Trace,
            integration: IntegrationSpec::Grid { per_axis: 25 },
        }
    }
}

impl ErrorModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 2.0 && self.q.is_finite()) {
            return Err(Error::config("error norm exponent q must satisfy q >= 2"));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::config("alpha and beta must be nonnegative"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config("lambda must be nonnegative and finite"));
            }
        }
        match self.integration {
            IntegrationSpec::Grid { per_axis } if per_axis < 1 => Err(Error::config(
                "grid integration needs at least 1 node per axis",
            )),
            IntegrationSpec::MonteCarlo { count, .. } if count < 1 => Err(Error::config(
                "Monte Carlo integration needs at least 1 node",
            )),
            _ => Ok(()),
        }
    }
}

/// Derivative bounds and stability constant for the pointwise
/// reconstruction-error bound (analytic-model validation path).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Bound on `‖∂µ/∂p‖`.
    pub c1: f64,
    /// Bound on `‖∂²µ/∂p²‖`.
    pub c2: f64,
    /// Minimal eigenvalue of the Gauss-Newton stability matrix at the solution.
    pub l_min: f64,
}

impl BoundConstants {
    pub fn new(c1: f64, c2: f64, l_min: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && l_min > 0.0) {
            return Err(Error::config("bound constants must all be positive"));
        }
        Ok(BoundConstants { c1, c2, l_min })
    }
}

/// Which form of the pointwise radius bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusForm {
    Exact,
    Simplified,
}

/// Spectral norm of the diagonal noise covariance.
fn sigma_norm(sigma_l: &DVector<f64>) -> f64 {
    sigma_l.iter().copied().fold(0.0, f64::max)
}

/// Spectral norm of the inverse diagonal noise covariance.
fn sigma_inv_norm(sigma_l: &DVector<f64>) -> f64 {
    1.0 / sigma_l.iter().copied().fold(f64::INFINITY, f64::min)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Error-transport factor `w̃(p) = ‖(f′ᵀΣ_l⁻¹f′ + λI)⁻¹ f′ᵀΣ_l⁻¹‖₂`.
///
/// `lambda = None` selects the relative default regularization; an explicit
/// `Some(0.0)` requests the unregularized factor and fails with
/// [`Error::SingularTransport`] when the normal matrix is singular.
pub fn transport_weight(
    model: &SurrogateModel,
    sigma_l: &DVector<f64>,
    lambda: Option<f64>,
    p: &DVector<f64>,
) -> Result<f64> {
    let jac = model.predict_gradient(p);
    transport_weight_of_jacobian(&jac, sigma_l, lambda)
}

/// [`transport_weight`] for an explicit Jacobian (used by tests and by the
/// reliability study, where the Jacobian may come from an exact model).
pub fn transport_weight_of_jacobian(
    jac: &DMatrix<f64>,
    sigma_l: &DVector<f64>,
    lambda: Option<f64>,
) -> Result<f64> {
    let (m, d) = jac.shape();
    if sigma_l.len() != m {
        return Err(Error::config(
            "noise covariance length must match output dimension",
        ));
    }
    // Jᵀ Σ_l⁻¹ (d×m) and the normal matrix N = Jᵀ Σ_l⁻¹ J (d×d).
    let mut jt_w = jac.transpose();
    for i in 0..m {
        let w = 1.0 / sigma_l[i];
        for c in 0..d {
            jt_w[(c, i)] *= w;
        }
    }
    let normal = &jt_w * jac;
    let lambda = match lambda {
        Some(l) => l,
        None => {
            let norm = spectral_norm(&normal);
            if norm == 0.0 {
                // Zero Jacobian: the transport factor's λ → 0 limit is 0.
                return Ok(0.0);
            }
            RELATIVE_LAMBDA * norm
        }
    };
    let mut regularized = normal;
    for c in 0..d {
        regularized[(c, c)] += lambda;
    }
    let chol = Cholesky::new(regularized).ok_or(Error::SingularTransport)?;
    let transport = chol.solve(&jt_w);
    Ok(spectral_norm(&transport))
}

/// `ε(p)^q` from the per-component predictive deviations.
fn epsilon_pow_q(stds: &DVector<f64>, mode: EpsilonMode, q: f64) -> f64 {
    match mode {
        EpsilonMode::Trace => stds.iter().map(|s| s.powf(q)).sum(),
        EpsilonMode::ChiMedian => {
            let m = stds.len() as f64;
            let median = m * (1.0 - 2.0 / (9.0 * m)).powi(3);
            median.powf(q / 2.0) * stds.norm().powf(q)
        }
    }
}

/// Scalar surrogate error level at `p` under the chosen aggregation.
pub fn surrogate_epsilon(
    model: &SurrogateModel,
    p: &DVector<f64>,
    mode: EpsilonMode,
    q: f64,
) -> f64 {
    let (_, stds) = model.predict(p);
    epsilon_pow_q(&stds, mode, q).powf(1.0 / q)
}

/// Local error density `g(p) = w̃(p)·ε(p)` (trace-mode `ε`); the acquisition
/// function for new evaluation positions.
pub fn local_error_density(
    model: &SurrogateModel,
    sigma_l: &DVector<f64>,
    cfg: &ErrorModelConfig,
    p: &DVector<f64>,
) -> Result<f64> {
    let w = transport_weight(model, sigma_l, cfg.lambda, p)?;
    Ok(w * surrogate_epsilon(model, p, EpsilonMode::Trace, cfg.q))
}

/// Pointwise reconstruction-error radius for surrogate error `ε` and
/// surrogate-derivative error `ε′`.
///
/// Exact form: `(3‖Σ_l⁻¹‖(ε′+C₁)ε + L ε′/C₂) / (L − 3‖Σ_l⁻¹‖C₁ε′)`;
/// simplified form: `12 L⁻¹‖Σ_l⁻¹‖C₁ ε + C₂⁻¹ ε′`.
pub fn radius_bound(
    eps: f64,
    eps_prime: f64,
    consts: &BoundConstants,
    sigma_l: &DVector<f64>,
    form: RadiusForm,
) -> Result<f64> {
    let sn = sigma_inv_norm(sigma_l);
    match form {
        RadiusForm::Simplified => {
            Ok(12.0 / consts.l_min * sn * consts.c1 * eps + eps_prime / consts.c2)
        }
        RadiusForm::Exact => {
            let denominator = consts.l_min - 3.0 * sn * consts.c1 * eps_prime;
            if denominator <= 0.0 {
                return Err(Error::InvalidRegime { denominator });
            }
            let numerator =
                3.0 * sn * (eps_prime + consts.c1) * eps + consts.l_min * eps_prime / consts.c2;
            Ok(numerator / denominator)
        }
    }
}

/// Unavoidable reconstruction error from the measurement noise alone:
/// `e₀ = (3C₁/L_min)·‖Σ_l⁻¹‖·sqrt(‖Σ_l‖)`.
pub fn unavoidable_error(consts: &BoundConstants, sigma_l: &DVector<f64>) -> f64 {
    3.0 * consts.c1 / consts.l_min * sigma_inv_norm(sigma_l) * sigma_norm(sigma_l).sqrt()
}

/// Constants-based error weight
/// `w(p) = (1+αe₀)⁻¹ (12 L⁻¹‖Σ_l⁻¹‖C₁ + βC₂⁻¹)` — the a-priori counterpart of
/// the data-driven [`transport_weight`], usable only when the derivative
/// bounds are known.
pub fn constants_weight(
    consts: &BoundConstants,
    sigma_l: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let e0 = unavoidable_error(consts, sigma_l);
    (12.0 / consts.l_min * sigma_inv_norm(sigma_l) * consts.c1 + beta / consts.c2)
        / (1.0 + alpha * e0)
}

/// Integration nodes for the configured quadrature over `domain`.
///
/// Grid nodes are cell centers in row-major order with axis 0 fastest;
/// Monte Carlo nodes are uniform draws from the quadrature's own seed, so
/// repeated calls yield the identical node set.
pub fn integration_nodes(cfg: &ErrorModelConfig, domain: &DomainBox) -> Vec<DVector<f64>> {
    let d = domain.dim();
    match cfg.integration {
        IntegrationSpec::Grid { per_axis } => {
            let mut nodes = Vec::with_capacity(per_axis.pow(d as u32));
            let mut idx = vec![0usize; d];
            loop {
                nodes.push(DVector::from_fn(d, |c, _| {
                    let u = (idx[c] as f64 + 0.5) / per_axis as f64;
                    domain.lower()[c] + u * domain.width()[c]
                }));
                let mut c = 0;
                loop {
                    idx[c] += 1;
                    if idx[c] < per_axis {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                    if c == d {
                        return nodes;
                    }
                }
            }
        }
        IntegrationSpec::MonteCarlo { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    DVector::from_fn(d, |c, _| {
                        domain.lower()[c] + rng.gen::<f64>() * domain.width()[c]
                    })
                })
                .collect()
        }
    }
}

/// Per-node view of the global error functional: positions, frozen transport
/// weights, current error levels.
#[derive(Debug, Clone)]
pub struct NodeTable {
    nodes: Vec<DVector<f64>>,
    /// Transport weight `w̃` per node (frozen between hyperparameter refits).
    weights: Vec<f64>,
    /// Error level `ε` per node (current design).
    eps: Vec<f64>,
    volume: f64,
    q: f64,
}

impl NodeTable {
    /// Assembles a table from raw parts (custom integrands in tests).
    #[cfg(test)]
    pub(crate) fn from_parts(
        nodes: Vec<DVector<f64>>,
        weights: Vec<f64>,
        eps: Vec<f64>,
        volume: f64,
        q: f64,
    ) -> Self {
        NodeTable {
            nodes,
            weights,
            eps,
            volume,
            q,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &DVector<f64> {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn eps(&self, i: usize) -> f64 {
        self.eps[i]
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Local error density `g = w̃·ε` at node `i`.
    pub fn density(&self, i: usize) -> f64 {
        self.weights[i] * self.eps[i]
    }

    /// Global error `E = (vol/N · Σ w̃^q ε^q)^{1/q}`.
    pub fn global_error(&self) -> f64 {
        let sum: f64 = (0..self.len())
            .map(|i| self.weights[i].powf(self.q) * self.eps[i].powf(self.q))
            .sum();
        (self.volume / self.len() as f64 * sum).powf(1.0 / self.q)
    }

    /// Node index maximizing the error density; ties break to the lowest index.
    pub fn argmax_density(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.len() {
            let g = self.density(i);
            match best {
                Some((_, gb)) if g <= gb => {}
                _ => best = Some((i, g)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// Node indices with the `k` largest densities, descending; ties break to
    /// the lowest index.
    pub fn top_k_density(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.density(b).total_cmp(&self.density(a)).then(a.cmp(&b)));
        order.truncate(k);
        order
    }
}

/// Evaluates weights and error levels over the integration nodes and returns
/// the global error with the per-node table for reuse by acquisition and
/// allocation.
pub fn global_error(
    model: &SurrogateModel,
    sigma_l: &DVector<f64>,
    cfg: &ErrorModelConfig,
) -> Result<(f64, NodeTable)> {
    cfg.validate()?;
    let domain = model.train().design().domain();
    let nodes = integration_nodes(cfg, domain);
    let rows: Result<Vec<(f64, f64)>> = nodes
        .par_iter()
        .map(|p| {
            let w = transport_weight(model, sigma_l, cfg.lambda, p)?;
            let eps = surrogate_epsilon(model, p, cfg.epsilon_mode, cfg.q);
            Ok((w, eps))
        })
        .collect();
    let rows = rows?;
    let table = NodeTable {
        nodes,
        weights: rows.iter().map(|r| r.0).collect(),
        eps: rows.iter().map(|r| r.1).collect(),
        volume: domain.volume(),
        q: cfg.q,
    };
    Ok((table.global_error(), table))
}

/// The allocation objective `Ẽ(v) = Σ_nodes w̃^q ε^q` as a smooth function of
/// the information levels `v = ε⁻²` of a point set, with transport weights
/// frozen from the node table.
///
/// All cross-covariances are precomputed at construction; each evaluation
/// costs one `n×n` factorization plus `O(n²)` work per node.
#[derive(Debug, Clone)]
pub struct AccuracyObjective {
    /// Kernel matrix over the point set (existing design + candidates).
    k_nn: DMatrix<f64>,
    /// Node-to-point cross covariances, one row per node.
    k_cross: DMatrix<f64>,
    /// Per-node coefficient `w̃^q · (ε/σ)^q` so that the node contributes
    /// `coeff · (σ_v²)^{q/2}`.
    coeff: Vec<f64>,
    signal_variance: f64,
    q: f64,
}

impl AccuracyObjective {
    pub fn new(
        hyper: &Hyperparameters,
        points: &[DVector<f64>],
        table: &NodeTable,
        output_dim: usize,
        mode: EpsilonMode,
    ) -> Self {
        let q = table.q();
        let m = output_dim as f64;
        // ε(x)^q = factor · σ(x)^q when all components share σ(x).
        let factor = match mode {
            EpsilonMode::Trace => m,
            EpsilonMode::ChiMedian => (m * m * (1.0 - 2.0 / (9.0 * m)).powi(3)).powf(q / 2.0),
        };
        let k_nn = hyper.kernel_matrix(points);
        let n = points.len();
        let mut k_cross = DMatrix::zeros(table.len(), n);
        for (x, node) in table.nodes().iter().enumerate() {
            for (i, p) in points.iter().enumerate() {
                k_cross[(x, i)] = hyper.kernel(node, p);
            }
        }
        let coeff = (0..table.len())
            .map(|x| table.weight(x).powf(q) * factor)
            .collect();
        AccuracyObjective {
            k_nn,
            k_cross,
            coeff,
            signal_variance: hyper.signal_variance(),
            q,
        }
    }

    pub fn len(&self) -> usize {
        self.k_nn.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k_nn.is_empty()
    }

    /// `Ẽ(v)`.
    pub fn value(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.assemble(v, false, false)?.0)
    }

    /// `Ẽ(v)` and `∇Ẽ(v)`.
    pub fn value_grad(&self, v: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (f, g, _) = self.assemble(v, true, false)?;
        Ok((f, g.expect("gradient requested")))
    }

    /// `Ẽ(v)`, `∇Ẽ(v)`, and `∇²Ẽ(v)`.
    pub fn value_grad_hess(&self, v: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let (f, g, h) = self.assemble(v, true, true)?;
        Ok((
            f,
            g.expect("gradient requested"),
            h.expect("hessian requested"),
        ))
    }

    #[allow(clippy::type_complexity)]
    fn assemble(
        &self,
        v: &DVector<f64>,
        want_grad: bool,
        want_hess: bool,
    ) -> Result<(f64, Option<DVector<f64>>, Option<DMatrix<f64>>)> {
        let n = self.len();
        if v.len() != n {
            return Err(Error::config(
                "allocation vector length must match the point set",
            ));
        }
        if v.iter().any(|vi| !(vi.is_finite() && *vi >= 0.0)) {
            return Err(Error::config(
                "information levels must be nonnegative and finite",
            ));
        }
        let s = v.map(f64::sqrt);
        let mut b = DMatrix::from_fn(n, n, |i, j| s[i] * self.k_nn[(i, j)] * s[j]);
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        let chol = Cholesky::new(b).ok_or(Error::FactorizationFailure { n })?;

        // K·S, shared by the residual vectors a = k_x − (KS)·B⁻¹·(Sk_x).
        let ks = if want_grad {
            let mut ks = self.k_nn.clone();
            for j in 0..n {
                for i in 0..n {
                    ks[(i, j)] *= s[j];
                }
            }
            Some(ks)
        } else {
            None
        };
        // Â = K − (KS)·B⁻¹·(KS)ᵀ, shared by every node's Hessian.
        let a_hat = match (&ks, want_hess) {
            (Some(ks), true) => {
                let solved = chol.solve(&ks.transpose());
                Some(&self.k_nn - ks * solved)
            }
            _ => None,
        };

        // Per-node pieces, computed in parallel but reduced in index order so
        // results are bitwise deterministic.
        let per_node: Vec<(f64, Option<DVector<f64>>)> = (0..self.coeff.len())
            .into_par_iter()
            .map(|x| {
                let kx = self.k_cross.row(x).transpose();
                let bx = kx.component_mul(&s);
                let w = chol.solve(&bx);
                let sigma2 = (self.signal_variance - bx.dot(&w)).max(0.0);
                let a = ks.as_ref().map(|ks| &kx - ks * &w);
                (sigma2, a)
            })
            .collect();

        let half_q = self.q / 2.0;
        let mut value = 0.0;
        let mut grad = want_grad.then(|| DVector::zeros(n));
        // G[i,j] = Σ_x coeff·φ′·a[i]a[j]; the Hessian is 2·Â∘G plus the
        // curvature-of-power term (zero at q = 2).
        let mut g_outer = want_hess.then(|| DMatrix::zeros(n, n));
        let mut power_term = want_hess.then(|| DMatrix::zeros(n, n));
        for (x, (sigma2, a)) in per_node.iter().enumerate() {
            let c = self.coeff[x];
            value += c * sigma2.powf(half_q);
            let Some(a) = a else { continue };
            let phi1 = c * half_q * sigma2.powf(half_q - 1.0);
            if let Some(grad) = grad.as_mut() {
                for i in 0..n {
                    grad[i] -= phi1 * a[i] * a[i];
                }
            }
            if let Some(g_outer) = g_outer.as_mut() {
                g_outer.syger(phi1, a, a, 1.0);
            }
            if half_q != 1.0 && *sigma2 > 0.0 {
                if let Some(power_term) = power_term.as_mut() {
                    let phi2 = c * half_q * (half_q - 1.0) * sigma2.powf(half_q - 2.0);
                    let da = a.map(|ai| ai * ai);
                    power_term.syger(phi2, &da, &da, 1.0);
                }
            }
        }
        let hess = match (g_outer, power_term, a_hat) {
            (Some(g), Some(p), Some(a_hat)) => {
                let mut h = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        // syger filled the lower triangle only.
                        let val = 2.0 * a_hat[(i, j)] * g[(i, j)] + p[(i, j)];
                        h[(i, j)] = val;
                        h[(j, i)] = val;
                    }
                }
                Some(h)
            }
            _ => None,
        };
        Ok((value, grad, hess))
    }
}

/// Gradient of `Ẽ(v) = Σ_nodes w̃^q ε^q` with respect to the information
/// levels of `points` (existing design followed by candidates), with weights
/// frozen from the model's current node table.
pub fn global_error_gradient(
    model: &SurrogateModel,
    sigma_l: &DVector<f64>,
    cfg: &ErrorModelConfig,
    points: &[DVector<f64>],
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (_, table) = global_error(model, sigma_l, cfg)?;
    let objective = AccuracyObjective::new(
        model.hyper(),
        points,
        &table,
        model.output_dim(),
        cfg.epsilon_mode,
    );
    Ok(objective.value_grad(v)?.1)
}
