use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gridprobe::bench::{run_bench, run_dataset, run_identification, run_topology, run_verification, MetricsReport};
use gridprobe::core::feeder::Feeder;
use gridprobe::core::ident::{admm_identify, round_to_tree, AdmmConfig, PriorMask};
use gridprobe::core::identifiability::{check_distinct_resistances, check_verifiable, recover_partial, DEFAULT_TOL};
use gridprobe::core::verify::{exhaustive_verify, VerifyProblem};
use gridprobe::dataset::{read_dataset, write_dataset, write_matrix};
use gridprobe::feeder_file::load_feeder;
use gridprobe::report::{export_bench, export_configurations, export_report, format_bench_table};
use gridprobe::scenario::{Overrides, Scenario};

#[derive(Parser)]
#[command(name = "gridprobe", version, about = "Topology identification and verification from inverter probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one probing run and write the dataset bundle.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo run index to simulate.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Monte-Carlo topology identification, or a single solve on a stored dataset.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Identify from a dataset bundle instead of simulating.
        #[arg(long, conflicts_with = "scenario")]
        dataset: Option<PathBuf>,
    },
    /// Monte-Carlo line-status verification.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Identifiability and verifiability of a probing placement.
    CheckIdentifiability {
        /// Feeder file; taken from the scenario when omitted.
        #[arg(long)]
        feeder: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Probed buses, comma separated.
        #[arg(long, value_delimiter = ',')]
        buses: Vec<usize>,
    },
    /// Identification against verification over the scenario's T sweep.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Relative 3σ measurement accuracy.
    #[arg(long)]
    noise: Option<f64>,
    /// Repetitions of the probing pattern.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Barrier weight of the solver the subcommand runs (identification for bench).
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn scenario(&self, verification: bool) -> anyhow::Result<Scenario> {
        let path = self.scenario.as_ref().context("--scenario is required")?;
        let mut s = Scenario::load(path)?;
        s.apply(&Overrides {
            seed: self.seed,
            runs: self.runs,
            noise: self.noise,
            repetitions: self.t,
            lambda: self.lambda,
            mu: if verification { None } else { self.mu },
            rho: self.rho,
            verify_mu: if verification { self.mu } else { None },
            nu: self.nu,
        });
        Ok(s)
    }
}

fn print_report(r: &MetricsReport) {
    println!(
        "{:?}: {} runs, {} configurations, probed buses {:?}, verifiable {}",
        r.task,
        r.scenario.runs,
        r.configurations,
        r.probed_buses,
        r.verifiable.map_or("unknown".into(), |v| v.to_string())
    );
    for s in &r.summary {
        let lambda = s.lambda.map(|l| format!("lambda {l:e}: ")).unwrap_or_default();
        print!(
            "  {lambda}rmse {:.4e} ± {:.2e}, line errors {:.3} ± {:.3}, failures {}",
            s.rmse_mean, s.rmse_std, s.line_errors_mean, s.line_errors_std, s.failures
        );
        match s.oracle_agreement {
            Some(a) => println!(", exhaustive agreement {:.3}", a),
            None => println!(),
        }
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, run } => {
            let s = common.scenario(false)?;
            let out = common.out.as_ref().context("--out is required")?;
            let r = s.resolve()?;
            let (idx, feeder) = run_topology(&s, &r, run)?;
            let data = run_dataset(&s, &r, &feeder, run, s.identify.weight)?;
            write_dataset(out, &data, s.seed, run, s.model.name())?;
            println!(
                "run {run}: configuration {idx}, {} buses, {} slots -> {}",
                data.n(),
                data.slots(),
                out.display()
            );
        }
        Command::Identify { common, dataset: Some(dir) } => {
            let (_, data) = read_dataset(&dir)?;
            let defaults = gridprobe::scenario::IdentifySpec::default();
            let cfg = AdmmConfig {
                lambda: common.lambda.unwrap_or(defaults.lambda[0]),
                mu: common.mu.unwrap_or(defaults.mu),
                rho: common.rho.unwrap_or(defaults.rho),
                ..AdmmConfig::default()
            };
            let mask = PriorMask::full(data.n());
            let res = admm_identify(&data, &mask, &cfg)?;
            let tree = round_to_tree(&res.theta, &mask)?;
            println!("{} iterations, converged {}", res.iterations, res.converged);
            println!("parent,child,r");
            for (p, c, r) in &tree.lines {
                println!("{p},{c},{r:e}");
            }
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                write_matrix(&out.join("theta_hat.csv"), &res.theta)?;
                write_matrix(&out.join("theta_tree.csv"), &tree.theta)?;
            }
        }
        Command::Identify { common, dataset: None } => {
            let report = run_identification(&common.scenario(false)?)?;
            print_report(&report);
            if let Some(out) = &common.out {
                export_report(&report, out)?;
            }
        }
        Command::Verify { common } => {
            let s = common.scenario(true)?;
            let report = run_verification(&s)?;
            print_report(&report);
            if let Some(out) = &common.out {
                export_report(&report, out)?;
                let r = s.resolve()?;
                if r.configs.len() <= s.verify.exhaustive_budget {
                    let (_, feeder) = run_topology(&s, &r, 0)?;
                    let data = run_dataset(&s, &r, &feeder, 0, s.verify.weight)?;
                    let prob = VerifyProblem::new(&feeder, &data, s.verify.mu, s.verify.nu)?;
                    let ex = exhaustive_verify(&prob, s.verify.exhaustive_budget)?;
                    export_configurations(&ex, feeder.status(), &out.join("configurations.csv"))?;
                }
            }
        }
        Command::CheckIdentifiability { feeder, scenario, buses } => {
            let (f, buses) = match (feeder, scenario) {
                (Some(path), _) => (load_feeder(path)?, buses),
                (None, Some(path)) => {
                    let r = Scenario::load(path)?.resolve()?;
                    let buses = if buses.is_empty() { r.plan.buses().to_vec() } else { buses };
                    (r.feeder, buses)
                }
                (None, None) => bail!("give --feeder or --scenario"),
            };
            check(&f, &buses)?;
        }
        Command::Bench { common } => {
            let bench = run_bench(&common.scenario(false)?)?;
            print!("{}", format_bench_table(&bench.rows));
            if let Some(out) = &common.out {
                export_bench(&bench, out)?;
            }
        }
    }
    Ok(())
}

fn check(f: &Feeder, buses: &[usize]) -> anyhow::Result<()> {
    if buses.is_empty() {
        bail!("no probed buses given");
    }
    if let Some(b) = buses.iter().find(|&&b| b == 0 || b > f.n()) {
        bail!("bus {b} is not a load bus of this feeder (1..={})", f.n());
    }
    let index = f.index();
    let leaves: Vec<usize> = index.leaves().iter().collect();
    let missing: Vec<usize> = leaves.iter().copied().filter(|l| !buses.contains(l)).collect();
    println!("buses: {}, lines: {}, probed: {buses:?}", f.bus_count(), f.lines().len());
    println!("leaves of the energized topology: {leaves:?}");
    if missing.is_empty() {
        println!("identifiable: yes (every leaf is probed)");
    } else {
        println!("identifiable: not guaranteed, unprobed leaves {missing:?}");
    }
    let r = f.resistance_matrix();
    let cols = r.select_columns(buses.iter().map(|b| b - 1).collect::<Vec<_>>().iter());
    let partial = recover_partial(&cols, buses, DEFAULT_TOL)?;
    println!(
        "noiseless recovery: {} lines determined, {} ancestor positions ambiguous",
        partial.lines.len(),
        partial.unresolved.len()
    );
    let configs = f.radial_configurations(gridprobe::scenario::CONFIG_BUDGET)?;
    let report = check_verifiable(f, &configs, buses)?;
    let distinct = check_distinct_resistances(f, DEFAULT_TOL);
    println!("radial configurations: {}", configs.len());
    println!("distinct resistances: {}", if distinct { "yes" } else { "no" });
    match report.verifiable() {
        Some(true) => println!("verifiable: yes"),
        Some(false) => {
            println!("verifiable: no");
            for i in 0..configs.len() {
                let class = report.class_of(i);
                if class.len() > 1 && class[0] == i {
                    println!("  indistinguishable configurations: {class:?}");
                }
            }
        }
        None => println!("verifiable: undecided (resistances not distinct)"),
    }
    Ok(())
}
