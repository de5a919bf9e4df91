//! Topology identification from probing data.
//!
//! The convex estimator solves
//!
//! ```text
//! min_{Θ ∈ M}  ½‖Θ Ṽ − I_C Δ‖²_W + λ trace(Θ Π) − μ log|Θ|,   Π = I + 11ᵀ
//! ```
//!
//! by ADMM over four copies of `Θ`: the quadratic part, the log-det barrier,
//! the sign pattern set `S(Γ̃)` and the row-sum set `S₀(Γ̃)`.

use alloc::vec;
use core::fmt;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Result};
use crate::feeder::lift_phi;
use crate::graph::{minimum_spanning_tree, TreeGraph};
use crate::math;
use crate::probing::ProbingDataset;

/// Prior knowledge of non-energized lines over buses `0..=N`.
/// `allows(m, n) == false` means line `(m, n)` is known to be open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorMask {
    size: usize,
    allowed: Vec<bool>,
}

impl PriorMask {
    /// No prior information (`Γ̃ = 11ᵀ`) for an `n`-bus feeder.
    pub fn full(n: usize) -> Self {
        Self {
            size: n + 1,
            allowed: vec![true; (n + 1) * (n + 1)],
        }
    }

    /// Only the listed bus pairs may be energized.
    pub fn from_candidates(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let size = n + 1;
        let mut allowed = vec![false; size * size];
        for &(a, b) in pairs {
            if a >= size || b >= size {
                bail!(Argument, "candidate line ({a}, {b}) outside 0..={n}");
            }
            allowed[a * size + b] = true;
            allowed[b * size + a] = true;
        }
        Ok(Self { size, allowed })
    }

    /// From a symmetric `(N+1)×(N+1)` 0/1 matrix; the diagonal is ignored.
    pub fn from_matrix(gamma: &DMatrix<f64>) -> Result<Self> {
        let size = gamma.nrows();
        if gamma.ncols() != size || size < 2 {
            bail!(Dimension, "Γ̃ must be square with at least two rows");
        }
        let mut allowed = vec![false; size * size];
        for i in 0..size {
            for j in 0..size {
                if (gamma[(i, j)] != 0.0) != (gamma[(j, i)] != 0.0) {
                    bail!(Argument, "Γ̃ is not symmetric at ({i}, {j})");
                }
                allowed[i * size + j] = gamma[(i, j)] != 0.0;
            }
        }
        Ok(Self { size, allowed })
    }

    /// `N`.
    pub fn n(&self) -> usize {
        self.size - 1
    }

    pub fn allows(&self, a: usize, b: usize) -> bool {
        self.allowed[a * self.size + b]
    }

    /// Whether `Θ[i, j]` (0-based, bus `i+1`, `j+1`) may be nonzero.
    fn offdiag_free(&self, i: usize, j: usize) -> bool {
        self.allows(i + 1, j + 1)
    }

    /// Whether row `i` of `Θ` may have a positive sum (line to the substation).
    fn row_free(&self, i: usize) -> bool {
        self.allows(0, i + 1)
    }

    /// Candidate-edge matrix over buses `0..=N` for spanning-tree search.
    pub fn edge_matrix(&self) -> DMatrix<bool> {
        DMatrix::from_fn(self.size, self.size, |i, j| i != j && self.allows(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Asymmetric { row: usize, col: usize },
    PositiveOffDiagonal { row: usize, col: usize },
    MaskedNonzero { row: usize, col: usize },
    NegativeRowSum { row: usize },
    MaskedRowSum { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Asymmetric { row, col } => write!(f, "Θ[{row},{col}] ≠ Θ[{col},{row}]"),
            Violation::PositiveOffDiagonal { row, col } => write!(f, "Θ[{row},{col}] > 0"),
            Violation::MaskedNonzero { row, col } => write!(f, "Θ[{row},{col}] ≠ 0 on a known-open line"),
            Violation::NegativeRowSum { row } => write!(f, "row {row} sums below zero"),
            Violation::MaskedRowSum { row } => write!(f, "row {row} must sum to zero"),
        }
    }
}

/// Tests `Θ ∈ M` with absolute tolerance `tol`, listing every violation.
pub fn membership_m(theta: &DMatrix<f64>, mask: &PriorMask, tol: f64) -> Vec<Violation> {
    let n = theta.nrows();
    assert_eq!(mask.n(), n, "mask and Θ sizes differ");
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = theta[(i, j)];
            if j > i && math::abs(v - theta[(j, i)]) > tol {
                out.push(Violation::Asymmetric { row: i, col: j });
            }
            if mask.offdiag_free(i, j) {
                if v > tol {
                    out.push(Violation::PositiveOffDiagonal { row: i, col: j });
                }
            } else if math::abs(v) > tol {
                out.push(Violation::MaskedNonzero { row: i, col: j });
            }
        }
        let s: f64 = theta.row(i).sum();
        if mask.row_free(i) {
            if s < -tol {
                out.push(Violation::NegativeRowSum { row: i });
            }
        } else if math::abs(s) > tol {
            out.push(Violation::MaskedRowSum { row: i });
        }
    }
    out
}

/// Euclidean projection onto `S(Γ̃)`: free off-diagonals clipped at zero,
/// masked ones zeroed, diagonal unchanged.
pub fn project_s(y: &DMatrix<f64>, mask: &PriorMask) -> DMatrix<f64> {
    let n = y.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let v = y[(i, j)];
        if i == j {
            v
        } else if mask.offdiag_free(i, j) {
            v.min(0.0)
        } else {
            0.0
        }
    })
}

/// Euclidean projection onto `S₀(Γ̃)`, row by row: a halfspace
/// `1ᵀx ≥ 0` for rows that may connect to the substation, the subspace
/// `1ᵀx = 0` otherwise.
pub fn project_s0(y: &DMatrix<f64>, mask: &PriorMask) -> DMatrix<f64> {
    let n = y.nrows();
    let mut out = y.clone();
    for i in 0..n {
        let s: f64 = y.row(i).sum();
        let shift = if mask.row_free(i) { s.min(0.0) } else { s } / n as f64;
        for j in 0..n {
            out[(i, j)] -= shift;
        }
    }
    out
}

/// Solves `W Θ G + s Θ = C` for symmetric PD `W`, symmetric PSD `G` and
/// `s > 0` by diagonalizing both once.
#[derive(Debug, Clone)]
pub struct SylvesterSolver {
    v: DMatrix<f64>,
    w: DVector<f64>,
    u: DMatrix<f64>,
    g: DVector<f64>,
}

impl SylvesterSolver {
    pub fn new(w: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.shape() != (n, n) || gram.shape() != (n, n) {
            bail!(Dimension, "W and the Gram matrix must both be {n}×{n}");
        }
        if math::spd_log_det(&math::symmetrize(w)).is_none() {
            bail!(Argument, "W must be positive definite");
        }
        let ew = math::symmetrize(w).symmetric_eigen();
        let eg = math::symmetrize(gram).symmetric_eigen();
        Ok(Self {
            v: ew.eigenvectors,
            w: ew.eigenvalues,
            u: eg.eigenvectors,
            // Round-off can leave tiny negative eigenvalues on a PSD Gram.
            g: eg.eigenvalues.map(|x| x.max(0.0)),
        })
    }

    pub fn solve(&self, c: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
        let mut t = self.v.transpose() * c * &self.u;
        for j in 0..t.ncols() {
            for i in 0..t.nrows() {
                t[(i, j)] /= self.w[i] * self.g[j] + shift;
            }
        }
        &self.v * t * self.u.transpose()
    }
}

/// One-shot `W Θ G + 3ρ Θ = C`.
pub fn sylvester_solve(w: &DMatrix<f64>, gram: &DMatrix<f64>, rho: f64, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(rho > 0.0) {
        bail!(Argument, "ρ must be positive");
    }
    Ok(SylvesterSolver::new(w, gram)?.solve(c, 3.0 * rho))
}

/// `Π = I + 11ᵀ`.
pub fn pi_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + DMatrix::from_element(n, n, 1.0)
}

/// Objective of the convex estimator; `None` outside the PD cone.
pub fn objective(theta: &DMatrix<f64>, data: &ProbingDataset, lambda: f64, mu: f64) -> Option<f64> {
    let fit = data_fit(theta, data);
    let trace = (theta * pi_matrix(theta.nrows())).trace();
    let logdet = if mu == 0.0 { 0.0 } else { math::spd_log_det(&math::symmetrize(theta))? };
    Some(fit + lambda * trace - mu * logdet)
}

/// `½‖Θ Ṽ − I_C Δ‖²_W`.
pub fn data_fit(theta: &DMatrix<f64>, data: &ProbingDataset) -> f64 {
    let r = theta * &data.v_tilde - data.target();
    0.5 * math::weighted_sq_norm(&r, &data.w)
}

/// Gradient of the objective over general (not necessarily symmetric)
/// `Θ`: `W(ΘṼ − I_CΔ)Ṽᵀ + λΠ − μΘ⁻ᵀ`.
pub fn gradient(theta: &DMatrix<f64>, data: &ProbingDataset, lambda: f64, mu: f64) -> Result<DMatrix<f64>> {
    let n = theta.nrows();
    let r = theta * &data.v_tilde - data.target();
    let mut g = &data.w * r * data.v_tilde.transpose() + pi_matrix(n) * lambda;
    if mu != 0.0 {
        let Some(inv) = theta.clone().try_inverse() else {
            bail!(Infeasible, "Θ is singular");
        };
        g -= inv.transpose() * mu;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub lambda: f64,
    pub mu: f64,
    /// Initial penalty, in units of the mean eigenvalue of `W ⊗ ṼṼᵀ`.
    pub rho: f64,
    /// Tolerance on the primal residual and on the change of the copies,
    /// both relative to `‖Θ₁‖_F`; `None` means `1e-7`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Periodically rebalance `ρ` when primal and dual residuals differ by
    /// more than 10×.
    pub adaptive_rho: bool,
    pub record_history: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda: 5e-3,
            mu: 1.0,
            rho: 1.0,
            tol: None,
            max_iter: 50_000,
            adaptive_rho: true,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmRecord {
    pub iteration: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    /// Symmetric part of the quadratic-block copy at termination.
    pub theta: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
    pub history: Vec<AdmmRecord>,
}

/// ADMM iterate state, exposed for step-by-step inspection.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    cfg: AdmmConfig,
    mask: PriorMask,
    sylvester: SylvesterSolver,
    // W I_C Δ Ṽᵀ − λΠ, constant across iterations.
    c0: DMatrix<f64>,
    rho: f64,
    tol: f64,
    theta: [DMatrix<f64>; 4],
    // Scaled multipliers for copies 2, 3, 4.
    m: [DMatrix<f64>; 3],
    iteration: usize,
    rho_changes: usize,
}

// Penalty rebalancing runs on a slow clock and stops after a fixed number of
// changes so the iteration settles into plain fixed-ρ ADMM.
const RHO_PERIOD: usize = 50;
const RHO_MAX_CHANGES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResiduals {
    pub primal: f64,
    pub dual: f64,
    /// `‖Θ₁‖_F` after the step.
    pub scale: f64,
}

impl AdmmSolver {
    pub fn new(data: &ProbingDataset, mask: &PriorMask, cfg: &AdmmConfig) -> Result<Self> {
        data.validate()?;
        let n = data.n();
        if mask.n() != n {
            bail!(Dimension, "mask is for {} buses, data for {n}", mask.n());
        }
        if !(cfg.lambda >= 0.0 && cfg.mu > 0.0 && cfg.rho > 0.0) {
            bail!(Argument, "need λ ≥ 0, μ > 0 and ρ > 0");
        }
        if math::max_abs(&data.v_tilde) == 0.0 {
            bail!(Argument, "voltage data are identically zero");
        }
        let gram = &data.v_tilde * data.v_tilde.transpose();
        let curvature = gram.trace() * data.w.trace() / (n * n) as f64;
        let sylvester = SylvesterSolver::new(&data.w, &gram)?;
        let wbv = &data.w * data.target() * data.v_tilde.transpose();
        let c0 = wbv - pi_matrix(n) * cfg.lambda;
        // Start every copy at the best scalar multiple of I (a member of M).
        let num = math::weighted_sq_norm(&data.v_tilde, &data.w);
        let cross: f64 = (&data.w * data.target()).component_mul(&data.v_tilde).sum();
        let scale = if num > 0.0 && cross > 0.0 { cross / num } else { 1.0 };
        let start = DMatrix::identity(n, n) * scale;
        let zero = DMatrix::zeros(n, n);
        Ok(Self {
            cfg: *cfg,
            mask: mask.clone(),
            sylvester,
            c0,
            rho: cfg.rho * curvature,
            tol: cfg.tol.unwrap_or(1e-7),
            theta: [start.clone(), start.clone(), start.clone(), start],
            m: [zero.clone(), zero.clone(), zero],
            iteration: 0,
            rho_changes: 0,
        })
    }

    pub fn copies(&self) -> &[DMatrix<f64>; 4] {
        &self.theta
    }

    pub fn multipliers(&self) -> &[DMatrix<f64>; 3] {
        &self.m
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn step(&mut self) -> Result<StepResiduals> {
        let rho = self.rho;
        let mut c = self.c0.clone();
        for i in 0..3 {
            c += (&self.theta[i + 1] - &self.m[i]) * rho;
        }
        let t1 = self.sylvester.solve(&c, 3.0 * rho);

        let y2 = math::symmetrize(&(&t1 + &self.m[0]));
        let eig = y2.symmetric_eigen();
        let shift = 4.0 * self.cfg.mu / rho;
        let lam = eig.eigenvalues.map(|l| 0.5 * (l + math::sqrt(l * l + shift)));
        let t2 = math::symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose()));
        let t3 = project_s(&(&t1 + &self.m[1]), &self.mask);
        let t4 = project_s0(&(&t1 + &self.m[2]), &self.mask);

        let mut primal = 0.0;
        let mut dual = 0.0;
        for (i, next) in [t2, t3, t4].into_iter().enumerate() {
            let gap = &t1 - &next;
            primal += gap.norm_squared();
            dual += (&next - &self.theta[i + 1]).norm_squared();
            self.m[i] += gap;
            self.theta[i + 1] = next;
        }
        self.theta[0] = t1;
        self.iteration += 1;
        let res = StepResiduals {
            primal: math::sqrt(primal),
            dual: rho * math::sqrt(dual),
            scale: self.theta[0].norm(),
        };
        if !res.primal.is_finite() || !res.dual.is_finite() {
            bail!(Solver, "ADMM diverged at iteration {}", self.iteration);
        }
        if self.cfg.adaptive_rho && self.iteration % RHO_PERIOD == 0 && self.rho_changes < RHO_MAX_CHANGES {
            let factor = if res.primal > 10.0 * res.dual {
                2.0
            } else if res.dual > 10.0 * res.primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                self.rho_changes += 1;
                self.rho *= factor;
                for m in &mut self.m {
                    *m /= factor;
                }
            }
        }
        Ok(res)
    }

    pub fn solve(mut self, data: &ProbingDataset) -> Result<AdmmResult> {
        let mut history = Vec::new();
        let mut last = StepResiduals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            scale: 0.0,
        };
        let mut converged = false;
        while self.iteration < self.cfg.max_iter {
            let rho = self.rho;
            last = self.step()?;
            if self.cfg.record_history {
                let t = math::symmetrize(&self.theta[0]);
                history.push(AdmmRecord {
                    iteration: self.iteration,
                    objective: objective(&t, data, self.cfg.lambda, self.cfg.mu).unwrap_or(f64::NAN),
                    primal: last.primal,
                    dual: last.dual,
                    rho,
                });
            }
            let bound = self.tol * last.scale;
            if last.primal <= bound && last.dual <= rho * bound {
                converged = true;
                break;
            }
        }
        Ok(AdmmResult {
            theta: math::symmetrize(&self.theta[0]),
            iterations: self.iteration,
            converged,
            primal: last.primal,
            dual: last.dual,
            rho: self.rho,
            history,
        })
    }
}

pub fn admm_identify(data: &ProbingDataset, mask: &PriorMask, cfg: &AdmmConfig) -> Result<AdmmResult> {
    AdmmSolver::new(data, mask, cfg)?.solve(data)
}

/// Scaled KKT residual of the convex estimator at a symmetric `Θ`, computed
/// from the problem data alone.
///
/// With `G = sym(∇f(Θ))`, stationarity fixes the row-sum multipliers at
/// `κ_i = G_ii` and the off-diagonal ones at `η_ij = (G_ii + G_jj)/2 − G_ij`.
/// The residual is the largest of primal infeasibility (relative to `‖Θ‖`),
/// multiplier sign violations (relative to the gradient scale), and
/// complementary slackness (relative to both).
pub fn kkt_residual(theta: &DMatrix<f64>, data: &ProbingDataset, mask: &PriorMask, lambda: f64, mu: f64) -> Result<f64> {
    let n = theta.nrows();
    let Some(inv) = math::spd_inverse(&math::symmetrize(theta)) else {
        bail!(Infeasible, "Θ is not positive definite");
    };
    let fit = &data.w * (theta * &data.v_tilde) * data.v_tilde.transpose();
    let lin = &data.w * data.target() * data.v_tilde.transpose();
    let pi = pi_matrix(n) * lambda;
    let barrier = inv * mu;
    let g = math::symmetrize(&(&fit - &lin + &pi - &barrier));
    let g_scale = (fit.norm() + lin.norm() + pi.norm() + barrier.norm()).max(f64::MIN_POSITIVE);
    let t_scale = theta.norm().max(f64::MIN_POSITIVE);

    let mut primal: f64 = math::max_abs(&(theta - theta.transpose()));
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..n {
        let s: f64 = theta.row(i).sum();
        let kappa = g[(i, i)];
        if mask.row_free(i) {
            primal = primal.max(-s);
            dual = dual.max(-kappa);
            comp = comp.max(math::abs(kappa * s));
        } else {
            primal = primal.max(math::abs(s));
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = theta[(i, j)];
            if mask.offdiag_free(i, j) {
                let eta = 0.5 * (g[(i, i)] + g[(j, j)]) - g[(i, j)];
                primal = primal.max(v);
                dual = dual.max(-eta);
                comp = comp.max(math::abs(eta * v));
            } else {
                primal = primal.max(math::abs(v));
            }
        }
    }
    Ok((primal / t_scale).max(dual / g_scale).max(comp / (g_scale * t_scale)))
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub theta: DMatrix<f64>,
    /// Covariance of the column-major vectorization, `(ṼṼᵀ)⁻¹ ⊗ Σ`.
    pub covariance: DMatrix<f64>,
}

impl MleResult {
    pub fn covariance_trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Least-squares estimate `I_C Δ Ṽᵀ (ṼṼᵀ)⁻¹`, defined when every bus is probed.
pub fn mle_identify(data: &ProbingDataset) -> Result<MleResult> {
    data.validate()?;
    let n = data.n();
    if data.probed_buses.len() != n {
        bail!(
            Unsupported,
            "the unconstrained estimate needs every bus probed ({} of {n})",
            data.probed_buses.len()
        );
    }
    let gram = &data.v_tilde * data.v_tilde.transpose();
    let Some(gram_inv) = math::spd_inverse(&gram) else {
        bail!(Infeasible, "ṼṼᵀ is singular");
    };
    let theta = data.target() * data.v_tilde.transpose() * &gram_inv;
    let Some(sigma) = math::spd_inverse(&data.w) else {
        bail!(Argument, "W must be positive definite");
    };
    Ok(MleResult {
        theta,
        covariance: gram_inv.kronecker(&math::symmetrize(&sigma)),
    })
}

/// A radial topology read off an estimate.
#[derive(Debug, Clone)]
pub struct TreeEstimate {
    pub graph: TreeGraph,
    /// `(parent, child, r)`; `r` is infinite when the kept coupling is not negative.
    pub lines: Vec<(usize, usize, f64)>,
    /// Reduced Laplacian of the tree with the kept couplings.
    pub theta: DMatrix<f64>,
}

impl TreeEstimate {
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        self.graph.edge_set()
    }
}

/// Minimum spanning tree on `Φ(Θ̂)`, keeping the estimated couplings on its
/// edges.
pub fn round_to_tree(theta_hat: &DMatrix<f64>, mask: &PriorMask) -> Result<TreeEstimate> {
    let n = theta_hat.nrows();
    if mask.n() != n {
        bail!(Dimension, "mask is for {} buses, Θ̂ for {n}", mask.n());
    }
    let phi = lift_phi(&math::symmetrize(theta_hat));
    let graph = minimum_spanning_tree(&phi, Some(&mask.edge_matrix()))?;
    let mut lines = Vec::with_capacity(n);
    let mut theta = DMatrix::zeros(n, n);
    for (p, c) in graph.edges() {
        let w = -phi[(p, c)];
        lines.push((p, c, if w > 0.0 { 1.0 / w } else { f64::INFINITY }));
        theta[(c - 1, c - 1)] += w;
        if p > 0 {
            theta[(p - 1, p - 1)] += w;
            theta[(p - 1, c - 1)] -= w;
            theta[(c - 1, p - 1)] -= w;
        }
    }
    Ok(TreeEstimate { graph, lines, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::tests_support::random_feeder;
    use crate::feeder::{Feeder, Line};
    use crate::probing::{simulate, Design, GridModel, NoiseConfig, ProbingPlan};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path() -> Feeder {
        Feeder::new(
            3,
            vec![Line::new(0, 1, 1.0, 1.0), Line::new(1, 2, 2.0, 2.0)],
            vec![true, true],
            vec![],
        )
        .unwrap()
    }

    fn path_theta() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.5, -0.5, -0.5, 0.5])
    }

    fn noiseless(f: &Feeder, buses: &[usize]) -> ProbingDataset {
        let plan = ProbingPlan::new(buses, &vec![1.0; buses.len()], Design::Diagonal).unwrap();
        simulate(f, &plan, &NoiseConfig::noiseless(), GridModel::Linear, 0).unwrap()
    }

    #[test]
    fn membership_examples() {
        let full = PriorMask::full(2);
        assert!(membership_m(&path_theta(), &full, 0.0).is_empty());
        let bad = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 0.5]);
        assert_eq!(
            membership_m(&bad, &full, 0.0),
            vec![
                Violation::PositiveOffDiagonal { row: 0, col: 1 },
                Violation::PositiveOffDiagonal { row: 1, col: 0 }
            ]
        );
        // Declaring the energized line 1-2 open contradicts the truth.
        let mask = PriorMask::from_candidates(2, &[(0, 1), (0, 2)]).unwrap();
        let v = membership_m(&path_theta(), &mask, 0.0);
        assert!(v.contains(&Violation::MaskedNonzero { row: 0, col: 1 }));
    }

    #[test]
    fn projection_examples() {
        let full = PriorMask::full(2);
        let y = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 5.0]);
        assert_eq!(project_s(&y, &full), DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]));
        let mask = PriorMask::from_candidates(2, &[(0, 1), (0, 2)]).unwrap();
        let y = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, -3.0, 1.0]);
        assert_eq!(project_s(&y, &mask), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));

        let y = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 2.0, 2.0]);
        let halfspace = project_s0(&y, &full);
        assert_eq!(halfspace.row(0), DMatrix::from_row_slice(1, 2, &[2.0, -2.0]));
        assert_eq!(halfspace.row(1), y.row(1));
        let none = PriorMask::from_candidates(2, &[(1, 2)]).unwrap();
        let subspace = project_s0(&y, &none);
        assert_eq!(subspace.row(0), DMatrix::from_row_slice(1, 2, &[2.0, -2.0]));
        assert_eq!(subspace.row(1), DMatrix::from_row_slice(1, 2, &[0.0, 0.0]));
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn sylvester_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        let gram = random_spd(&mut rng, n);
        let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = 0.7;
        let direct = &c * (&gram + DMatrix::identity(n, n) * 3.0 * rho).try_inverse().unwrap();
        let t = sylvester_solve(&DMatrix::identity(n, n), &gram, rho, &c).unwrap();
        assert_abs_diff_eq!(t, direct, epsilon = 1e-10);

        let wd = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let gd = DVector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
        let t = sylvester_solve(&DMatrix::from_diagonal(&wd), &DMatrix::from_diagonal(&gd), rho, &c).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((t[(i, j)] - c[(i, j)] / (wd[i] * gd[j] + 3.0 * rho)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sylvester_matches_kronecker_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 8;
        let w = random_spd(&mut rng, n);
        let a = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let gram = &a * a.transpose();
        let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let rho = 0.3;
        let t = sylvester_solve(&w, &gram, rho, &c).unwrap();
        // vec(W Θ G) = (Gᵀ ⊗ W) vec(Θ)
        let k = gram.transpose().kronecker(&w) + DMatrix::identity(n * n, n * n) * 3.0 * rho;
        let vc = DVector::from_column_slice(c.as_slice());
        let vt = k.lu().solve(&vc).unwrap();
        assert_abs_diff_eq!(DVector::from_column_slice(t.as_slice()), vt, epsilon = 1e-9);
        let res = &w * &t * &gram + &t * 3.0 * rho - &c;
        assert!(res.norm() <= 1e-8 * c.norm());
    }

    #[test]
    fn admm_scalar_closed_form() {
        let (t, c, mu) = (6, 0.8, 0.05);
        let data = ProbingDataset::new(
            DMatrix::from_element(1, t, 1.0),
            DMatrix::from_element(1, t, c),
            vec![1],
        )
        .unwrap();
        let cfg = AdmmConfig {
            lambda: 0.0,
            mu,
            tol: Some(1e-12),
            ..AdmmConfig::default()
        };
        let res = admm_identify(&data, &PriorMask::full(1), &cfg).unwrap();
        let tf = t as f64;
        let expect = (tf * c + (tf * tf * c * c + 4.0 * tf * mu).sqrt()) / (2.0 * tf);
        assert!(res.converged);
        assert!((res.theta[(0, 0)] - expect).abs() < 1e-8);
    }

    #[test]
    fn admm_small_regularization_recovers_path() {
        let f = path();
        // Leaf data alone fit a one-parameter family of Θ exactly; the barrier
        // selects the truth when μ/λ is large enough.
        let cfg = AdmmConfig {
            lambda: 1e-5,
            mu: 1e-4,
            tol: Some(1e-11),
            ..AdmmConfig::default()
        };
        let res = admm_identify(&noiseless(&f, &[2]), &PriorMask::full(2), &cfg).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((&res.theta - path_theta()).norm() < 1e-3, "{res:?}");
    }

    #[test]
    fn admm_iterates_stay_in_their_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_feeder(&mut rng, 7, 0.5, 2.0);
        let data = noiseless(&f, &[1, 3, 5]);
        let mask = PriorMask::full(6);
        let mut s = AdmmSolver::new(&data, &mask, &AdmmConfig::default()).unwrap();
        for _ in 0..200 {
            s.step().unwrap();
            let [_, t2, t3, t4] = s.copies();
            assert_eq!(t2, &t2.transpose());
            assert!(t2.clone().symmetric_eigen().eigenvalues.min() > 0.0);
            assert_eq!(&project_s(t3, &mask), t3);
            assert!(t3.iter().enumerate().all(|(k, v)| k % 7 == 0 || *v <= 0.0));
            for i in 0..6 {
                assert!(t4.row(i).sum() >= -1e-12);
            }
        }
    }

    #[test]
    fn admm_solution_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_feeder(&mut rng, 8, 0.5, 2.0);
        let plan = ProbingPlan::new(&[2, 4, 6, 7], &[1.0; 4], Design::Paired).unwrap();
        let noise = NoiseConfig {
            meas_rel_accuracy: 0.05,
            ..NoiseConfig::noiseless()
        };
        let data = simulate(&f, &plan, &noise, GridModel::Linear, 1).unwrap();
        let mask = PriorMask::full(7);
        let cfg = AdmmConfig {
            lambda: 0.05,
            mu: 0.5,
            ..AdmmConfig::default()
        };
        let res = admm_identify(&data, &mask, &cfg).unwrap();
        assert!(res.converged);
        let kkt = kkt_residual(&res.theta, &data, &mask, cfg.lambda, cfg.mu).unwrap();
        assert!(kkt < 1e-5, "kkt residual {kkt}");
        // Feasible convex combinations never improve the objective.
        let best = objective(&res.theta, &data, cfg.lambda, cfg.mu).unwrap();
        let other = f.energized_laplacian();
        for t in [1e-3, 1e-2, 0.1, 0.5] {
            let mix = &res.theta * (1.0 - t) + &other * t;
            assert!(objective(&mix, &data, cfg.lambda, cfg.mu).unwrap() >= best - 1e-9 * best.abs());
        }
    }

    #[test]
    fn kkt_flags_non_optimal_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_feeder(&mut rng, 6, 0.5, 2.0);
        let data = noiseless(&f, &[1, 2, 3, 4, 5]);
        let kkt = kkt_residual(&(DMatrix::identity(5, 5) * 3.0), &data, &PriorMask::full(5), 0.01, 0.1).unwrap();
        assert!(kkt > 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_feeder(&mut rng, 6, 0.5, 2.0);
        let plan = ProbingPlan::new(&[1, 3, 5], &[1.0; 3], Design::Paired).unwrap();
        let noise = NoiseConfig {
            meas_rel_accuracy: 0.1,
            ..NoiseConfig::noiseless()
        };
        let data = simulate(&f, &plan, &noise, GridModel::Linear, 0).unwrap();
        let (lambda, mu) = (0.1, 0.7);
        for _ in 0..5 {
            let theta = random_spd(&mut rng, 5);
            let g = gradient(&theta, &data, lambda, mu).unwrap();
            let d = math::symmetrize(&DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0)));
            let h = 1e-6;
            let fp = objective(&(&theta + &d * h), &data, lambda, mu).unwrap();
            let fm = objective(&(&theta - &d * h), &data, lambda, mu).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = g.component_mul(&d).sum();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0));
        }
    }

    #[test]
    fn mle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_feeder(&mut rng, 6, 0.5, 2.0);
        let data = noiseless(&f, &[1, 2, 3, 4, 5]);
        let mle = mle_identify(&data).unwrap();
        assert_abs_diff_eq!(mle.theta, f.energized_laplacian(), epsilon = 1e-9);
        assert_eq!(mle.covariance.shape(), (25, 25));
        assert!(matches!(mle_identify(&noiseless(&f, &[1, 2])), Err(crate::Error::Unsupported(_))));

        let plan = ProbingPlan::new(&[1, 2, 3, 4, 5], &[1.0; 5], Design::Paired).unwrap();
        let noise = NoiseConfig {
            meas_rel_accuracy: 0.01,
            ..NoiseConfig::noiseless()
        };
        let noisy = mle_identify(&simulate(&f, &plan, &noise, GridModel::Linear, 0).unwrap()).unwrap();
        assert!(noisy.theta.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn rounding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let f = random_feeder(&mut rng, 8, 0.5, 2.0);
            let truth = f.energized_laplacian();
            let mask = PriorMask::full(7);
            let est = round_to_tree(&truth, &mask).unwrap();
            assert_eq!(est.edge_set(), f.graph().edge_set());
            assert_abs_diff_eq!(est.theta, truth, epsilon = 1e-12);
            for &(p, c, r) in &est.lines {
                let line = f.lines()[f.feeding_line(c).unwrap()];
                assert_eq!(f.graph().parent(c), Some(p));
                assert!((r - line.r).abs() < 1e-12 * line.r);
            }
            let noise = math::symmetrize(&DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1e-6..1e-6)));
            assert_eq!(round_to_tree(&(truth + noise), &mask).unwrap().edge_set(), f.graph().edge_set());
        }
    }

    #[test]
    fn rounding_picks_strongest_coupling_tree() {
        use crate::graph::enumerate_spanning_trees;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let pairs: Vec<(usize, usize)> = (0..=n).flat_map(|a| ((a + 1)..=n).map(move |b| (a, b))).collect();
        for _ in 0..10 {
            let theta_hat = {
                let f = random_feeder(&mut rng, n + 1, 0.5, 2.0);
                let e = math::symmetrize(&DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2)));
                f.energized_laplacian() + e
            };
            let phi = lift_phi(&theta_hat);
            let trees = enumerate_spanning_trees(n + 1, &pairs, &vec![false; pairs.len()], 10_000).unwrap();
            let coupling = |t: &Vec<bool>| -> f64 {
                pairs.iter().zip(t).filter(|(_, on)| **on).map(|(&(a, b), _)| -phi[(a, b)]).sum()
            };
            let best = trees.iter().map(coupling).fold(f64::NEG_INFINITY, f64::max);
            let est = round_to_tree(&theta_hat, &PriorMask::full(n)).unwrap();
            let got: f64 = est.edge_set().iter().map(|&(a, b)| -phi[(a, b)]).sum();
            assert!((got - best).abs() < 1e-12);
        }
    }
}
