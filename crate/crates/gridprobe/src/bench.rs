//! Monte-Carlo identification and verification runs.

use std::collections::BTreeSet;

use gridprobe_core::feeder::Feeder;
use gridprobe_core::ident::{admm_identify, round_to_tree, AdmmConfig, PriorMask};
use gridprobe_core::identifiability::check_verifiable;
use gridprobe_core::probing::{simulate, slot_rng, ProbingDataset};
use gridprobe_core::verify::{
    exhaustive_verify, line_errors, pgd_verify, round_status, PgdConfig, VerifyProblem,
};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scenario::{PriorKind, Resolved, Scenario, WeightKind};

/// Slot key of the per-run topology draw, disjoint from probing slots.
const TOPOLOGY_SLOT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Identification,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    /// Index of the energized configuration among the candidate ones.
    pub topology: usize,
    pub lambda: Option<f64>,
    /// `‖Θ̃ − Θ_o‖_F / ‖Θ_o‖_F`.
    pub rmse: Option<f64>,
    pub line_errors: Option<usize>,
    pub is_tree: Option<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Line errors of the exhaustive minimizer.
    pub oracle_line_errors: Option<usize>,
    pub oracle_agrees: Option<bool>,
    pub error: Option<String>,
}

impl RunRecord {
    fn failed(run: u64, topology: usize, lambda: Option<f64>, err: impl ToString) -> Self {
        Self {
            run,
            topology,
            lambda,
            rmse: None,
            line_errors: None,
            is_tree: None,
            iterations: 0,
            converged: false,
            oracle_line_errors: None,
            oracle_agrees: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub lambda: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub line_errors_mean: f64,
    pub line_errors_std: f64,
    pub oracle_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub scenario: Scenario,
    pub probed_buses: Vec<usize>,
    pub configurations: usize,
    /// Whether the probed buses tell every candidate configuration apart,
    /// when that can be decided.
    pub verifiable: Option<bool>,
    pub summary: Vec<Summary>,
    pub records: Vec<RunRecord>,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
}

impl MetricsReport {
    pub fn summary_for(&self, lambda: Option<f64>) -> Option<&Summary> {
        self.summary.iter().find(|s| s.lambda == lambda)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(records: &[RunRecord], lambda: Option<f64>) -> Summary {
    let group: Vec<&RunRecord> = records.iter().filter(|r| r.lambda == lambda).collect();
    let ok: Vec<&RunRecord> = group.iter().copied().filter(|r| r.error.is_none()).collect();
    let rmse: Vec<f64> = ok.iter().filter_map(|r| r.rmse).collect();
    let errs: Vec<f64> = ok.iter().filter_map(|r| r.line_errors.map(|e| e as f64)).collect();
    let agree: Vec<bool> = ok.iter().filter_map(|r| r.oracle_agrees).collect();
    let (rmse_mean, rmse_std) = mean_std(&rmse);
    let (line_errors_mean, line_errors_std) = mean_std(&errs);
    Summary {
        lambda,
        runs: group.len(),
        failures: group.len() - ok.len(),
        rmse_mean,
        rmse_std,
        line_errors_mean,
        line_errors_std,
        oracle_agreement: (!agree.is_empty())
            .then(|| agree.iter().filter(|&&a| a).count() as f64 / agree.len() as f64),
    }
}

/// Energized topology of run `run`.
pub fn run_topology(s: &Scenario, r: &Resolved, run: u64) -> Result<(usize, Feeder)> {
    if !s.draw_topology {
        let idx = r.configs.iter().position(|c| c == r.feeder.status()).unwrap_or(0);
        return Ok((idx, r.feeder.clone()));
    }
    let idx = slot_rng(s.seed, run, TOPOLOGY_SLOT).random_range(0..r.configs.len());
    Ok((idx, r.feeder.with_status(r.configs[idx].clone())?))
}

/// Probing data of run `run` on its energized topology.
pub fn run_dataset(s: &Scenario, r: &Resolved, feeder: &Feeder, run: u64, weight: WeightKind) -> Result<ProbingDataset> {
    let data = simulate(feeder, &r.plan, &s.noise_config(), s.model.grid_model(), run)?;
    Ok(match weight {
        WeightKind::Blue => data,
        WeightKind::Identity => {
            let n = data.n();
            data.with_weight(DMatrix::identity(n, n))?
        }
    })
}

fn relative_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (est - truth).norm() / truth.norm()
}

fn edge_errors(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    a.symmetric_difference(&b).count()
}

fn verifiable(r: &Resolved) -> Option<bool> {
    check_verifiable(&r.feeder, &r.configs, r.plan.buses()).ok()?.verifiable()
}

fn admm_config(s: &Scenario, lambda: f64, history: bool) -> AdmmConfig {
    AdmmConfig {
        lambda,
        mu: s.identify.mu,
        rho: s.identify.rho,
        tol: s.identify.tol,
        max_iter: s.identify.max_iter,
        adaptive_rho: s.identify.adaptive_rho,
        record_history: history,
    }
}

fn prior_mask(s: &Scenario, feeder: &Feeder) -> Result<PriorMask> {
    let n = feeder.n();
    Ok(match s.identify.prior {
        PriorKind::None => PriorMask::full(n),
        PriorKind::Candidates => {
            let pairs: Vec<_> = feeder.lines().iter().map(|l| (l.from, l.to)).collect();
            PriorMask::from_candidates(n, &pairs)?
        }
    })
}

/// Per run: draw a topology, simulate probing, solve the relaxed
/// identification problem for every λ, round to a tree and score it.
pub fn run_identification(s: &Scenario) -> Result<MetricsReport> {
    let r = s.resolve()?;
    let per_run: Vec<(Vec<RunRecord>, Vec<HistoryRow>)> = (0..s.runs as u64)
        .into_par_iter()
        .map(|run| identification_run(s, &r, run))
        .collect();
    let mut records = Vec::new();
    let mut history = Vec::new();
    for (recs, hist) in per_run {
        records.extend(recs);
        if history.is_empty() {
            history = hist;
        }
    }
    let summary = s.identify.lambda.iter().map(|&l| summarize(&records, Some(l))).collect();
    Ok(MetricsReport {
        task: Task::Identification,
        scenario: s.clone(),
        probed_buses: r.plan.buses().to_vec(),
        configurations: r.configs.len(),
        verifiable: verifiable(&r),
        summary,
        records,
        history,
    })
}

fn identification_run(s: &Scenario, r: &Resolved, run: u64) -> (Vec<RunRecord>, Vec<HistoryRow>) {
    let lambdas = &s.identify.lambda;
    let prepared = run_topology(s, r, run).and_then(|(idx, feeder)| {
        let data = run_dataset(s, r, &feeder, run, s.identify.weight)?;
        let mask = prior_mask(s, &feeder)?;
        Ok((idx, feeder, data, mask))
    });
    let (idx, feeder, data, mask) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return (lambdas.iter().map(|&l| RunRecord::failed(run, 0, Some(l), &msg)).collect(), vec![]);
        }
    };
    let truth = feeder.energized_laplacian();
    let truth_edges = feeder.graph().edge_set();
    let mut history = Vec::new();
    let records = lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let want_history = s.identify.history && run == 0 && k == 0;
            let res = admm_identify(&data, &mask, &admm_config(s, lambda, want_history))
                .and_then(|res| Ok((round_to_tree(&res.theta, &mask)?, res)));
            match res {
                Ok((tree, res)) => {
                    if want_history {
                        history = res
                            .history
                            .iter()
                            .map(|h| HistoryRow {
                                iteration: h.iteration,
                                objective: h.objective,
                                primal: h.primal,
                                dual: h.dual,
                                rho: h.rho,
                            })
                            .collect();
                    }
                    RunRecord {
                        run,
                        topology: idx,
                        lambda: Some(lambda),
                        rmse: Some(relative_error(&tree.theta, &truth)),
                        line_errors: Some(edge_errors(&tree.edge_set(), &truth_edges)),
                        is_tree: Some(true),
                        iterations: res.iterations,
                        converged: res.converged,
                        oracle_line_errors: None,
                        oracle_agrees: None,
                        error: None,
                    }
                }
                Err(e) => RunRecord::failed(run, idx, Some(lambda), e),
            }
        })
        .collect();
    (records, history)
}

/// Per run: draw a topology, simulate probing, run projected gradient
/// descent on the relaxed verification problem and round. When the
/// configurations are few enough the exhaustive minimizer is scored too.
pub fn run_verification(s: &Scenario) -> Result<MetricsReport> {
    let r = s.resolve()?;
    let records: Vec<RunRecord> = (0..s.runs as u64)
        .into_par_iter()
        .map(|run| verification_run(s, &r, run))
        .collect();
    Ok(MetricsReport {
        task: Task::Verification,
        scenario: s.clone(),
        probed_buses: r.plan.buses().to_vec(),
        configurations: r.configs.len(),
        verifiable: verifiable(&r),
        summary: vec![summarize(&records, None)],
        records,
        history: vec![],
    })
}

fn verification_run(s: &Scenario, r: &Resolved, run: u64) -> RunRecord {
    let mut idx = 0;
    let out = (|| -> Result<RunRecord> {
        let (i, feeder) = run_topology(s, r, run)?;
        idx = i;
        let data = run_dataset(s, r, &feeder, run, s.verify.weight)?;
        let prob = VerifyProblem::new(&feeder, &data, s.verify.mu, s.verify.nu)?;
        let cfg = PgdConfig {
            max_iter: s.verify.max_iter,
            tol: s.verify.tol,
            ..PgdConfig::default()
        };
        let pgd = pgd_verify(&prob, None, &cfg)?;
        let rounded = round_status(&pgd.b, &feeder, s.verify.rounding.strategy())?;
        let truth = feeder.energized_laplacian();
        let est = feeder.reduced_laplacian(
            &rounded.status.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        );
        let (oracle_line_errors, oracle_agrees) =
            if s.verify.exhaustive_budget > 0 && r.configs.len() <= s.verify.exhaustive_budget {
                let ex = exhaustive_verify(&prob, s.verify.exhaustive_budget)?;
                (
                    Some(line_errors(ex.best_status(), feeder.status())),
                    Some(ex.best_status() == rounded.status.as_slice()),
                )
            } else {
                (None, None)
            };
        Ok(RunRecord {
            run,
            topology: idx,
            lambda: None,
            rmse: Some(relative_error(&est, &truth)),
            line_errors: Some(line_errors(&rounded.status, feeder.status())),
            is_tree: Some(rounded.is_tree),
            iterations: pgd.iterations,
            converged: pgd.converged,
            oracle_line_errors,
            oracle_agrees,
            error: None,
        })
    })();
    out.unwrap_or_else(|e| RunRecord::failed(run, idx, None, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub repetitions: usize,
    pub slots: usize,
    pub identification_line_errors: f64,
    pub identification_rmse: f64,
    pub verification_line_errors: f64,
    pub verification_rmse: f64,
    pub oracle_agreement: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub reports: Vec<(MetricsReport, MetricsReport)>,
}

/// Identification (first λ) and verification for every `T` in the bench
/// sweep.
pub fn run_bench(s: &Scenario) -> Result<BenchReport> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &t in &s.bench.repetitions {
        let mut st = s.clone();
        st.probing.repetitions = t;
        st.identify.lambda.truncate(1);
        let id = run_identification(&st)?;
        let ver = run_verification(&st)?;
        let slots = st.resolve()?.plan.slots();
        let (a, b) = (&id.summary[0], &ver.summary[0]);
        rows.push(BenchRow {
            repetitions: t,
            slots,
            identification_line_errors: a.line_errors_mean,
            identification_rmse: a.rmse_mean,
            verification_line_errors: b.line_errors_mean,
            verification_rmse: b.rmse_mean,
            oracle_agreement: b.oracle_agreement,
            failures: a.failures + b.failures,
        });
        reports.push((id, ver));
    }
    Ok(BenchReport { rows, reports })
}
