//! Topology verification: deciding which candidate lines are energized when
//! all line impedances are known.
//!
//! The exact problem minimizes `‖Θ(b)Ṽ − I_CΔ‖²_W` over radial status
//! vectors `b`. Small candidate sets are searched exhaustively; otherwise
//! the box relaxation
//!
//! ```text
//! min_b  ½‖Θ(b)Ṽ − I_CΔ‖²_W − μ log|Θ(b)|   s.t.  b ∈ [0,1]^{L_e}, 1ᵀb = N
//! ```
//!
//! is solved by projected gradient descent and rounded.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{bail, Result};
use crate::feeder::Feeder;
use crate::graph::{kruskal, WeightedEdge};
use crate::math;
use crate::probing::ProbingDataset;

#[derive(Debug, Clone)]
pub struct VerifyProblem<'a> {
    pub feeder: &'a Feeder,
    pub data: &'a ProbingDataset,
    /// Barrier weight of the relaxation.
    pub mu: f64,
    /// Initial step size of the projected gradient iteration.
    pub nu: f64,
    target: DMatrix<f64>,
}

impl<'a> VerifyProblem<'a> {
    pub fn new(feeder: &'a Feeder, data: &'a ProbingDataset, mu: f64, nu: f64) -> Result<Self> {
        data.validate()?;
        if data.n() != feeder.n() {
            bail!(Dimension, "data cover {} buses, feeder has {}", data.n(), feeder.n());
        }
        if feeder.lines().len() < feeder.n() {
            bail!(Argument, "fewer candidate lines than buses");
        }
        if !feeder.candidate_graph_connected() {
            bail!(Infeasible, "candidate lines do not connect all buses");
        }
        if !(mu >= 0.0 && nu > 0.0) {
            bail!(Argument, "need μ ≥ 0 and ν > 0");
        }
        Ok(Self {
            feeder,
            data,
            mu,
            nu,
            target: data.target(),
        })
    }

    pub fn line_count(&self) -> usize {
        self.feeder.lines().len()
    }

    /// `½‖Θ(b)Ṽ − I_CΔ‖²_W`.
    pub fn data_fit(&self, b: &[f64]) -> f64 {
        let r = self.feeder.reduced_laplacian(b) * &self.data.v_tilde - &self.target;
        0.5 * math::weighted_sq_norm(&r, &self.data.w)
    }

    /// Relaxed objective; `None` where `Θ(b)` is not positive definite.
    pub fn objective(&self, b: &[f64]) -> Option<f64> {
        let theta = self.feeder.reduced_laplacian(b);
        let logdet = math::spd_log_det(&theta)?;
        let r = theta * &self.data.v_tilde - &self.target;
        Some(0.5 * math::weighted_sq_norm(&r, &self.data.w) - self.mu * logdet)
    }

    /// `[g(b)]_ℓ = a_ℓᵀ [Ṽ(Θ(b)Ṽ − I_CΔ)ᵀW − μΘ⁻¹(b)] a_ℓ / r_ℓ`.
    pub fn gradient(&self, b: &[f64]) -> Result<Vec<f64>> {
        let theta = self.feeder.reduced_laplacian(b);
        let Some(inv) = math::spd_inverse(&theta) else {
            bail!(Infeasible, "Θ(b) is not positive definite");
        };
        let r = theta * &self.data.v_tilde - &self.target;
        let m = &self.data.v_tilde * r.transpose() * &self.data.w - inv * self.mu;
        let at = |i: usize, j: usize| if i == 0 || j == 0 { 0.0 } else { m[(i - 1, j - 1)] };
        Ok(self
            .feeder
            .lines()
            .iter()
            .map(|l| (at(l.from, l.from) + at(l.to, l.to) - at(l.from, l.to) - at(l.to, l.from)) / l.r)
            .collect())
    }

    /// `½‖I_CΔ‖²_W`, the scale used for zero-residual decisions.
    pub fn target_scale(&self) -> f64 {
        0.5 * math::weighted_sq_norm(&self.target, &self.data.w)
    }
}

/// Relative threshold below which a data fit counts as zero.
pub const ZERO_RESIDUAL_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub configs: Vec<Vec<bool>>,
    /// Data fit of each configuration.
    pub objective: Vec<f64>,
    /// Index of the minimizer (first among ties).
    pub best: usize,
    /// Every configuration within tolerance of the minimum, `best` included.
    pub ties: Vec<usize>,
    /// Configurations whose fit is zero up to [`ZERO_RESIDUAL_RTOL`].
    pub zero_residual: Vec<usize>,
}

impl ExhaustiveResult {
    pub fn best_status(&self) -> &[bool] {
        &self.configs[self.best]
    }
}

/// Evaluates every radial configuration that keeps the non-switchable lines
/// energized, refusing when there are more than `budget`.
pub fn exhaustive_verify(prob: &VerifyProblem<'_>, budget: usize) -> Result<ExhaustiveResult> {
    let configs = prob.feeder.radial_configurations(budget)?;
    if configs.is_empty() {
        bail!(Infeasible, "no radial configuration exists");
    }
    let objective: Vec<f64> = configs
        .iter()
        .map(|c| prob.data_fit(&c.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect::<Vec<_>>()))
        .collect();
    let zero = ZERO_RESIDUAL_RTOL * prob.target_scale();
    let mut best = 0;
    for (i, &v) in objective.iter().enumerate() {
        if v < objective[best] {
            best = i;
        }
    }
    let tie_tol = zero.max(1e-9 * objective[best]);
    let ties = (0..configs.len()).filter(|&i| objective[i] - objective[best] <= tie_tol).collect();
    let zero_residual = (0..configs.len()).filter(|&i| objective[i] <= zero).collect();
    Ok(ExhaustiveResult {
        configs,
        objective,
        best,
        ties,
        zero_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub max_iter: usize,
    /// Stop once an accepted step moves no entry of `b` by more than this.
    pub tol: f64,
    /// Double the step after every accepted iteration.
    pub grow_step: bool,
    pub record_history: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-9,
            grow_step: true,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct PgdResult {
    pub b: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub step: f64,
    pub history: Vec<PgdRecord>,
}

// Consecutive step halvings tolerated before giving up on an iteration.
const MAX_HALVINGS: usize = 80;

/// Projected gradient descent on the relaxation, starting from `b0` or from
/// `(N/L_e)·1`. Steps that raise the objective or leave the positive definite
/// cone are halved and retried. When no step size decreases the objective
/// the iterate is stationary at working precision and is returned as converged.
pub fn pgd_verify(prob: &VerifyProblem<'_>, b0: Option<&[f64]>, cfg: &PgdConfig) -> Result<PgdResult> {
    let l = prob.line_count();
    let n = prob.feeder.n();
    let mut b = match b0 {
        Some(b0) => {
            if b0.len() != l {
                bail!(Dimension, "start has {} entries for {l} lines", b0.len());
            }
            b0.to_vec()
        }
        None => vec![n as f64 / l as f64; l],
    };
    if !is_feasible(&b, n, 1e-9) {
        bail!(Argument, "start point is not in the capped simplex");
    }
    let Some(mut obj) = prob.objective(&b) else {
        bail!(Infeasible, "Θ(b⁰) is not positive definite");
    };
    let mut step = prob.nu;
    let mut history = Vec::new();
    let mut converged = false;
    // A growing step starts far below the curvature scale, where small moves
    // say nothing about stationarity.
    let mut calibrated = !cfg.grow_step;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let g = prob.gradient(&b)?;
        let mut accepted = None;
        for k in 0..MAX_HALVINGS {
            calibrated |= k > 0;
            let y: Vec<f64> = b.iter().zip(&g).map(|(bi, gi)| bi - step * gi).collect();
            let cand = project_capped_simplex(&y, n)?;
            match prob.objective(&cand) {
                Some(v) if v <= obj => {
                    accepted = Some((cand, v));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        // No step decreases the objective at working precision: stationary.
        let Some((next, v)) = accepted else {
            converged = true;
            break;
        };
        let moved = b.iter().zip(&next).map(|(a, c)| math::abs(a - c)).fold(0.0, f64::max);
        b = next;
        obj = v;
        if cfg.record_history {
            history.push(PgdRecord {
                iteration: iterations,
                objective: obj,
                step,
            });
        }
        if moved == 0.0 || (calibrated && moved <= cfg.tol) {
            converged = true;
            break;
        }
        if cfg.grow_step {
            step *= 2.0;
        }
    }
    Ok(PgdResult {
        b,
        objective: obj,
        iterations,
        converged,
        step,
        history,
    })
}

fn is_feasible(b: &[f64], n: usize, tol: f64) -> bool {
    b.iter().all(|&x| (-tol..=1.0 + tol).contains(&x)) && math::abs(b.iter().sum::<f64>() - n as f64) <= tol
}

/// Euclidean projection onto `{b ∈ [0,1]^L : 1ᵀb = N}`.
///
/// Bisection on the shift `λ` in `b_i = clip(y_i − λ, 0, 1)` identifies the
/// coordinates strictly inside the box; `λ` is then solved for exactly.
pub fn project_capped_simplex(y: &[f64], n: usize) -> Result<Vec<f64>> {
    let l = y.len();
    if n > l {
        bail!(Argument, "cannot select {n} of {l} entries");
    }
    if y.iter().any(|v| !v.is_finite()) {
        bail!(Argument, "projection input is not finite");
    }
    if n == l {
        return Ok(vec![1.0; l]);
    }
    if n == 0 {
        return Ok(vec![0.0; l]);
    }
    let target = n as f64;
    let total = |lam: f64| y.iter().map(|v| (v - lam).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    let free: Vec<usize> = (0..l).filter(|&i| y[i] - lam > 0.0 && y[i] - lam < 1.0).collect();
    let upper = (0..l).filter(|&i| y[i] - lam >= 1.0).count();
    let lam = if free.is_empty() {
        lam
    } else {
        (free.iter().map(|&i| y[i]).sum::<f64>() + upper as f64 - target) / free.len() as f64
    };
    Ok(y.iter().map(|v| (v - lam).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingStrategy {
    /// Keep the `N` largest entries.
    TopN,
    /// Maximum-weight spanning tree on the relaxed statuses.
    Mst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundedStatus {
    pub status: Vec<bool>,
    /// Whether the selected lines form a spanning tree.
    pub is_tree: bool,
}

pub fn round_status(b: &[f64], feeder: &Feeder, strategy: RoundingStrategy) -> Result<RoundedStatus> {
    let l = feeder.lines().len();
    let n = feeder.n();
    if b.len() != l {
        bail!(Dimension, "{} statuses for {l} lines", b.len());
    }
    let status = match strategy {
        RoundingStrategy::TopN => {
            let mut order: Vec<usize> = (0..l).collect();
            order.sort_by(|&i, &j| b[j].total_cmp(&b[i]).then(i.cmp(&j)));
            let mut s = vec![false; l];
            for &i in order.iter().take(n) {
                s[i] = true;
            }
            s
        }
        RoundingStrategy::Mst => {
            let edges: Vec<WeightedEdge> = feeder
                .lines()
                .iter()
                .zip(b)
                .map(|(line, &w)| WeightedEdge {
                    u: line.from,
                    v: line.to,
                    weight: -w,
                })
                .collect();
            let mut s = vec![false; l];
            for i in kruskal(feeder.bus_count(), &edges)? {
                s[i] = true;
            }
            s
        }
    };
    let is_tree = feeder.with_status(status.clone()).is_ok();
    Ok(RoundedStatus { status, is_tree })
}

/// Energized lines missed plus non-energized lines selected.
pub fn line_errors(estimate: &[bool], truth: &[bool]) -> usize {
    estimate.iter().zip(truth).filter(|(a, b)| a != b).count()
}
