//! Experiment description read from TOML.
//!
//! ```toml
//! feeder = "feeder13.txt"      # relative to the scenario file
//! runs = 100
//! seed = 1
//! model = "ac"                 # or "linear"
//!
//! [probing]
//! buses = "candidate-leaves"   # "leaves", "all" or an explicit list such as [3, 5, 8]
//! design = "paired"            # or "diagonal"
//! repetitions = 1              # T
//! delta = "load"               # or a magnitude, or one magnitude per bus
//!
//! [noise]
//! measurement = 1e-4
//! load_sigma = 0.067
//!
//! [identify]
//! lambda = [5e-4, 5e-3, 5e-2]
//!
//! [verify]
//! mu = 2e-8
//! nu = 1e-10
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gridprobe_core::feeder::Feeder;
use gridprobe_core::probing::{Design, GridModel, NoiseConfig, ProbingPlan};
use gridprobe_core::verify::RoundingStrategy;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::feeder_file::load_feeder;

/// Cap on the radial configurations enumerated for topology draws.
pub const CONFIG_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub feeder: PathBuf,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    /// Draw the energized configuration uniformly per run instead of using
    /// the statuses in the feeder file.
    #[serde(default = "yes")]
    pub draw_topology: bool,
    pub probing: ProbingSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub identify: IdentifySpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub bench: BenchSpec,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    #[default]
    Ac,
}

impl ModelKind {
    pub fn grid_model(self) -> GridModel {
        match self {
            Self::Linear => GridModel::Linear,
            Self::Ac => GridModel::Ac,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Ac => "ac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BusSelection {
    Named(String),
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Named(String),
    Uniform(f64),
    PerBus(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Diagonal,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbingSpec {
    pub buses: BusSelection,
    #[serde(default = "paired")]
    pub design: DesignKind,
    /// Back-to-back repetitions of the probing pattern (`T`).
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "load_delta")]
    pub delta: DeltaSpec,
}

fn paired() -> DesignKind {
    DesignKind::Paired
}

fn one() -> usize {
    1
}

fn load_delta() -> DeltaSpec {
    DeltaSpec::Named("load".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Relative 3σ accuracy of the voltage readings.
    pub measurement: f64,
    /// Per-slot load variation relative to nominal.
    pub load_sigma: f64,
    pub gamma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            measurement: 1e-4,
            load_sigma: 0.067,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    #[default]
    Identity,
    Blue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// Every bus pair may be connected.
    #[default]
    None,
    /// Only pairs joined by a candidate line.
    Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySpec {
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub rho: f64,
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    pub weight: WeightKind,
    pub prior: PriorKind,
    /// Dump the iterate history of the first run.
    pub history: bool,
}

impl Default for IdentifySpec {
    fn default() -> Self {
        Self {
            lambda: vec![5e-3],
            mu: 1.0,
            rho: 1.0,
            tol: None,
            max_iter: 50_000,
            adaptive_rho: true,
            weight: WeightKind::Identity,
            prior: PriorKind::None,
            history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingKind {
    #[default]
    TopN,
    Mst,
}

impl RoundingKind {
    pub fn strategy(self) -> RoundingStrategy {
        match self {
            Self::TopN => RoundingStrategy::TopN,
            Self::Mst => RoundingStrategy::Mst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub mu: f64,
    pub nu: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub weight: WeightKind,
    pub rounding: RoundingKind,
    /// Largest configuration count searched exhaustively; 0 disables the
    /// exhaustive oracle.
    pub exhaustive_budget: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            mu: 2e-8,
            nu: 1e-10,
            max_iter: 2000,
            tol: 1e-9,
            weight: WeightKind::Identity,
            rounding: RoundingKind::TopN,
            exhaustive_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSpec {
    pub repetitions: Vec<usize>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            repetitions: vec![1, 2, 5, 10],
        }
    }
}

/// Command-line overrides; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub noise: Option<f64>,
    pub repetitions: Option<usize>,
    pub lambda: Option<f64>,
    /// Identification barrier weight.
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    /// Verification barrier weight.
    pub verify_mu: Option<f64>,
    pub nu: Option<f64>,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses `text`; a relative feeder path is resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text)?;
        if s.feeder.is_relative() {
            s.feeder = base.join(&s.feeder);
        }
        Ok(s)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.runs {
            self.runs = v;
        }
        if let Some(v) = o.noise {
            self.noise.measurement = v;
        }
        if let Some(v) = o.repetitions {
            self.probing.repetitions = v;
        }
        if let Some(v) = o.lambda {
            self.identify.lambda = vec![v];
        }
        if let Some(v) = o.mu {
            self.identify.mu = v;
        }
        if let Some(v) = o.rho {
            self.identify.rho = v;
        }
        if let Some(v) = o.verify_mu {
            self.verify.mu = v;
        }
        if let Some(v) = o.nu {
            self.verify.nu = v;
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            meas_rel_accuracy: self.noise.measurement,
            load_sigma_rel: self.noise.load_sigma,
            gamma: self.noise.gamma,
            seed: self.seed,
        }
    }

    /// Loads the feeder and checks every scenario invariant against it.
    pub fn resolve(&self) -> Result<Resolved> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.probing.repetitions == 0 {
            return bad("probing repetitions (T) must be at least 1".into());
        }
        if self.identify.lambda.is_empty() || self.identify.lambda.iter().any(|l| !(*l >= 0.0)) {
            return bad("identify.lambda must be a non-empty list of non-negative values".into());
        }
        for (name, v) in [
            ("identify.mu", self.identify.mu),
            ("identify.rho", self.identify.rho),
            ("verify.nu", self.verify.nu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.verify.mu >= 0.0) {
            return bad(format!("verify.mu must be non-negative, got {}", self.verify.mu));
        }
        if self.bench.repetitions.iter().any(|&t| t == 0) {
            return bad("bench repetitions must be at least 1".into());
        }
        self.noise_config().validate()?;

        let feeder = load_feeder(&self.feeder)?;
        let configs = if self.draw_topology || matches!(self.probing.buses, BusSelection::Named(ref s) if s == "candidate-leaves") {
            feeder.radial_configurations(CONFIG_BUDGET)?
        } else {
            vec![feeder.status().to_vec()]
        };
        let n = feeder.n();
        let buses = match &self.probing.buses {
            BusSelection::List(b) => b.clone(),
            BusSelection::Named(name) => match name.as_str() {
                "all" => (1..=n).collect(),
                "leaves" => feeder.index().leaves().iter().collect(),
                "candidate-leaves" => {
                    let mut set = BTreeSet::new();
                    for c in &configs {
                        set.extend(feeder.with_status(c.clone())?.index().leaves().iter());
                    }
                    set.into_iter().collect()
                }
                other => return bad(format!("unknown bus selection `{other}`")),
            },
        };
        if buses.is_empty() {
            return bad("no probed buses".into());
        }
        if let Some(b) = buses.iter().find(|&&b| b == 0 || b > n) {
            return bad(format!("probed bus {b} does not exist (buses are 1..={n})"));
        }
        let deltas = match &self.probing.delta {
            DeltaSpec::Named(s) if s == "load" => buses.iter().map(|&b| feeder.loads()[b].p).collect(),
            DeltaSpec::Named(s) => return bad(format!("unknown delta `{s}`")),
            DeltaSpec::Uniform(d) => vec![*d; buses.len()],
            DeltaSpec::PerBus(d) if d.len() == buses.len() => d.clone(),
            DeltaSpec::PerBus(d) => return bad(format!("{} deltas for {} probed buses", d.len(), buses.len())),
        };
        let design = match self.probing.design {
            DesignKind::Diagonal => Design::Diagonal,
            DesignKind::Paired => Design::Paired,
        };
        let plan = ProbingPlan::new(&buses, &deltas, design)
            .map_err(|e| Error::Scenario(format!("probing plan: {e}")))?
            .repeated(self.probing.repetitions);
        Ok(Resolved {
            feeder,
            configs,
            plan,
        })
    }
}

/// A scenario bound to its feeder.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub feeder: Feeder,
    /// Configurations topologies are drawn from.
    pub configs: Vec<Vec<bool>>,
    pub plan: ProbingPlan,
}
