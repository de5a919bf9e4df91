//! Probing plans and synthetic voltage-deviation data.
//!
//! A probing experiment runs over slots `t = 0..=T`. Slot 0 is the
//! unperturbed baseline; between slots `t-1` and `t` the probed inverters
//! change their active injection by column `t` of `Δ`. Loads are redrawn in
//! every slot, so each measured deviation `ṽ(t) = v(t) − v(t−1)` carries the
//! probing response, load variation, and measurement noise.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail, Result};
use crate::feeder::{AcOptions, Feeder};
use crate::math;

/// Power factor of the nominal loads.
pub const LOAD_POWER_FACTOR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// `Δ₁ = diag(δ)`: each bus steps once and stays.
    Diagonal,
    /// `Δ₂ = diag(δ) ⊗ [+1, −1]`: each bus drops and then resumes.
    Paired,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbingPlan {
    buses: Vec<usize>,
    delta: DMatrix<f64>,
    design: Design,
}

impl ProbingPlan {
    /// Plan over probed `buses` (1-based bus ids) with per-bus magnitudes.
    pub fn new(buses: &[usize], deltas: &[f64], design: Design) -> Result<Self> {
        if buses.len() != deltas.len() {
            bail!(Dimension, "{} deltas for {} buses", deltas.len(), buses.len());
        }
        if let Some(d) = deltas.iter().find(|d| **d == 0.0 || !d.is_finite()) {
            bail!(Argument, "probing magnitudes must be nonzero and finite, got {d}");
        }
        let c = buses.len();
        let delta = match design {
            Design::Diagonal => DMatrix::from_diagonal(&DVector::from_column_slice(deltas)),
            Design::Paired => {
                let mut d = DMatrix::zeros(c, 2 * c);
                for (i, &v) in deltas.iter().enumerate() {
                    d[(i, 2 * i)] = v;
                    d[(i, 2 * i + 1)] = -v;
                }
                d
            }
            Design::Custom => bail!(Argument, "use ProbingPlan::custom for explicit Δ"),
        };
        Self::checked(buses, delta, design)
    }

    pub fn custom(buses: &[usize], delta: DMatrix<f64>) -> Result<Self> {
        if delta.nrows() != buses.len() {
            bail!(Dimension, "Δ has {} rows for {} buses", delta.nrows(), buses.len());
        }
        Self::checked(buses, delta, Design::Custom)
    }

    fn checked(buses: &[usize], delta: DMatrix<f64>, design: Design) -> Result<Self> {
        for (i, &b) in buses.iter().enumerate() {
            if b == 0 {
                bail!(Argument, "the substation cannot be probed");
            }
            if buses[..i].contains(&b) {
                bail!(Argument, "bus {b} listed twice");
            }
        }
        Ok(Self {
            buses: buses.to_vec(),
            delta,
            design,
        })
    }

    /// The same pattern repeated `times` times back to back.
    pub fn repeated(&self, times: usize) -> Self {
        let (c, t) = self.delta.shape();
        let mut delta = DMatrix::zeros(c, t * times);
        for r in 0..times {
            delta.view_mut((0, r * t), (c, t)).copy_from(&self.delta);
        }
        Self {
            buses: self.buses.clone(),
            delta,
            design: self.design,
        }
    }

    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn probe_count(&self) -> usize {
        self.buses.len()
    }

    /// Number of measured deviations `T`.
    pub fn slots(&self) -> usize {
        self.delta.ncols()
    }

    pub fn rank(&self) -> usize {
        if self.delta.is_empty() {
            return 0;
        }
        self.delta.clone().svd(false, false).rank(1e-12 * math::max_abs(&self.delta).max(1e-300))
    }

    /// `I_C` for an `n`-bus feeder.
    pub fn selection(&self, n: usize) -> DMatrix<f64> {
        let rows: Vec<usize> = self.buses.iter().map(|b| b - 1).collect();
        math::selection(n, &rows)
    }

    /// `I_C Δ`, the injection changes on all buses.
    pub fn injections(&self, n: usize) -> DMatrix<f64> {
        self.selection(n) * &self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Relative 3σ accuracy of voltage-magnitude readings.
    pub meas_rel_accuracy: f64,
    /// Standard deviation of load variation relative to nominal load.
    pub load_sigma_rel: f64,
    /// Assumed reactance-to-resistance ratio for the BLUE weighting.
    pub gamma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            meas_rel_accuracy: 0.0,
            load_sigma_rel: 0.0,
            gamma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("measurement accuracy", self.meas_rel_accuracy),
            ("load sigma", self.load_sigma_rel),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Argument, "{name} must be a non-negative finite number, got {v}");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridModel {
    Linear,
    Ac,
}

#[derive(Debug, Clone)]
pub struct ProbingDataset {
    /// `Ṽ`, `N × T`.
    pub v_tilde: DMatrix<f64>,
    /// `Δ`, `C × T`.
    pub delta: DMatrix<f64>,
    pub probed_buses: Vec<usize>,
    /// Weighting matrix `W`, `N × N`.
    pub w: DMatrix<f64>,
    pub truth_theta: Option<DMatrix<f64>>,
    pub truth_status: Option<Vec<bool>>,
}

impl ProbingDataset {
    pub fn new(v_tilde: DMatrix<f64>, delta: DMatrix<f64>, probed_buses: Vec<usize>) -> Result<Self> {
        let n = v_tilde.nrows();
        let ds = Self {
            w: DMatrix::identity(n, n),
            v_tilde,
            delta,
            probed_buses,
            truth_theta: None,
            truth_status: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.v_tilde.nrows()
    }

    pub fn slots(&self) -> usize {
        self.v_tilde.ncols()
    }

    /// `I_C Δ`.
    pub fn target(&self) -> DMatrix<f64> {
        let rows: Vec<usize> = self.probed_buses.iter().map(|b| b - 1).collect();
        math::selection(self.n(), &rows) * &self.delta
    }

    pub fn with_weight(mut self, w: DMatrix<f64>) -> Result<Self> {
        self.w = w;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.delta.nrows() != self.probed_buses.len() || self.delta.ncols() != self.slots() {
            bail!(
                Dimension,
                "Δ is {}×{}, expected {}×{}",
                self.delta.nrows(),
                self.delta.ncols(),
                self.probed_buses.len(),
                self.slots()
            );
        }
        if let Some(b) = self.probed_buses.iter().find(|&&b| b == 0 || b > n) {
            bail!(Argument, "probed bus {b} outside 1..={n}");
        }
        if self.w.shape() != (n, n) {
            bail!(Dimension, "W must be {n}×{n}");
        }
        if math::max_abs(&(&self.w - self.w.transpose())) > 1e-12 * math::max_abs(&self.w).max(1.0)
            || math::spd_log_det(&self.w).is_none()
        {
            bail!(Argument, "W must be symmetric positive definite");
        }
        Ok(())
    }
}

/// Simulates one Monte-Carlo run of a probing plan on `feeder`.
pub fn simulate(
    feeder: &Feeder,
    plan: &ProbingPlan,
    noise: &NoiseConfig,
    model: GridModel,
    run: u64,
) -> Result<ProbingDataset> {
    noise.validate()?;
    let n = feeder.n();
    if let Some(b) = plan.buses().iter().find(|&&b| b > n) {
        bail!(Argument, "probed bus {b} outside 1..={n}");
    }
    let t = plan.slots();
    let p_nom = DVector::from_iterator(n, feeder.loads()[1..].iter().map(|l| l.p));
    let q_nom = DVector::from_iterator(n, feeder.loads()[1..].iter().map(|l| l.q));
    let steps = plan.injections(n);
    let sens = match model {
        GridModel::Linear => Some((feeder.resistance_matrix(), feeder.reactance_matrix())),
        GridModel::Ac => None,
    };
    let ac = AcOptions::default();

    let mut probe = DVector::zeros(n);
    let mut prev_p = DVector::zeros(n);
    let mut prev_q = DVector::zeros(n);
    let mut prev_v = DVector::zeros(n);
    let mut prev_e = DVector::zeros(n);
    let mut v_tilde = DMatrix::zeros(n, t);
    for slot in 0..=t {
        let mut rng = slot_rng(noise.seed, run, slot as u64);
        let z_load: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z_meas: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if slot > 0 {
            probe += steps.column(slot - 1);
        }
        let scale = DVector::from_iterator(n, z_load.iter().map(|z| 1.0 + noise.load_sigma_rel * z));
        let p = &probe - p_nom.component_mul(&scale);
        let q = -q_nom.component_mul(&scale);
        let (v, dv) = match &sens {
            Some((r, x)) => {
                let v = r * &p + x * &q + math::ones(n);
                // Deviations from the linear model directly, free of cancellation.
                let dv = r * (&p - &prev_p) + x * (&q - &prev_q);
                (v, dv)
            }
            None => {
                let v = feeder.ac_voltage(&p, &q, &ac)?.magnitudes;
                let dv = &v - &prev_v;
                (v, dv)
            }
        };
        let e = DVector::from_iterator(
            n,
            (0..n).map(|i| z_meas[i] * noise.meas_rel_accuracy * math::abs(v[i]) / 3.0),
        );
        if slot > 0 {
            v_tilde.set_column(slot - 1, &(dv + &e - &prev_e));
        }
        prev_p = p;
        prev_q = q;
        prev_v = v;
        prev_e = e;
    }
    let blue = blue_weight(noise, feeder);
    Ok(ProbingDataset {
        v_tilde,
        delta: plan.delta().clone(),
        probed_buses: plan.buses().to_vec(),
        w: blue.w,
        truth_theta: Some(feeder.energized_laplacian()),
        truth_status: Some(feeder.status().to_vec()),
    })
}

/// Independent stream per (seed, run, slot).
pub fn slot_rng(seed: u64, run: u64, slot: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ run) ^ slot);
    ChaCha8Rng::seed_from_u64(key)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct BlueWeight {
    pub w: DMatrix<f64>,
    /// `Σ` was singular and `W = I` was used instead.
    pub fallback: bool,
}

/// `W = Σ⁻¹` for the load-variation model of [`simulate`].
///
/// Successive-slot differences of i.i.d. loads give
/// `Σ_p = 2σ² diag(p²)`, `Σ_q = 2σ² diag(q²)`, `Σ_pq = 2σ² diag(p∘q)`.
pub fn blue_weight(noise: &NoiseConfig, feeder: &Feeder) -> BlueWeight {
    let n = feeder.n();
    let s2 = 2.0 * noise.load_sigma_rel * noise.load_sigma_rel;
    let loads = &feeder.loads()[1..];
    let diag = |f: &dyn Fn(f64, f64) -> f64| {
        DMatrix::from_diagonal(&DVector::from_iterator(n, loads.iter().map(|l| s2 * f(l.p, l.q))))
    };
    blue_weight_from_covariances(
        &diag(&|p, _| p * p),
        &diag(&|_, q| q * q),
        &diag(&|p, q| p * q),
        noise.gamma,
    )
}

/// `W = (Σ_p + γ²Σ_q + γ(Σ_pq + Σ_pqᵀ))⁻¹`, or `I` when that is singular.
pub fn blue_weight_from_covariances(
    sigma_p: &DMatrix<f64>,
    sigma_q: &DMatrix<f64>,
    sigma_pq: &DMatrix<f64>,
    gamma: f64,
) -> BlueWeight {
    let n = sigma_p.nrows();
    let sigma = sigma_p + sigma_q * (gamma * gamma) + (sigma_pq + sigma_pq.transpose()) * gamma;
    match math::spd_inverse(&math::symmetrize(&sigma)).filter(|_| math::spd_log_det(&sigma).is_some()) {
        Some(w) => BlueWeight {
            w: math::symmetrize(&w),
            fallback: false,
        },
        None => BlueWeight {
            w: DMatrix::identity(n, n),
            fallback: true,
        },
    }
}

/// Nominal reactive load for an active load at [`LOAD_POWER_FACTOR`].
pub fn reactive_at_power_factor(p: f64) -> f64 {
    let pf = LOAD_POWER_FACTOR;
    p * math::sqrt(1.0 - pf * pf) / pf
}

/// Empirical covariance of the columns of `x` (mean removed).
pub fn column_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = x.shape();
    let mean: DVector<f64> = x.column_mean();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..t {
        let d = x.column(j) - &mean;
        c += &d * d.transpose();
    }
    c / (t.max(2) - 1) as f64
}
