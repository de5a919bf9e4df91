//! Report files: a per-run CSV table and a JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use gridprobe_core::verify::ExhaustiveResult;
use serde::Serialize;

use crate::bench::{BenchReport, BenchRow, MetricsReport, Summary, Task};
use crate::error::{io_err, Result};
use crate::scenario::Scenario;

#[derive(Serialize)]
struct SummaryFile<'a> {
    task: Task,
    runs: usize,
    probed_buses: &'a [usize],
    configurations: usize,
    verifiable: Option<bool>,
    summary: &'a [Summary],
    scenario: &'a Scenario,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(path))
}

/// Writes `runs.csv`, `summary.json` and, when recorded, `history.csv`
/// into `dir`. Returns the files written.
pub fn export_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let runs = dir.join("runs.csv");
    let mut w = csv::Writer::from_path(&runs)?;
    for r in &report.records {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&runs))?;
    written.push(runs);

    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &SummaryFile {
            task: report.task,
            runs: report.scenario.runs,
            probed_buses: &report.probed_buses,
            configurations: report.configurations,
            verifiable: report.verifiable,
            summary: &report.summary,
            scenario: &report.scenario,
        },
    )?;
    written.push(summary);

    if !report.history.is_empty() {
        let path = dir.join("history.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for h in &report.history {
            w.serialize(h)?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// `bench.csv` plus one report directory per task and `T`.
pub fn export_bench(bench: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &bench.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(&path))?;
    let mut written = vec![path];
    for (row, (id, ver)) in bench.rows.iter().zip(&bench.reports) {
        let sub = dir.join(format!("T{}", row.repetitions));
        written.extend(export_report(id, &sub.join("identify"))?);
        written.extend(export_report(ver, &sub.join("verify"))?);
    }
    Ok(written)
}

pub fn format_bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("T     slots  ident.errors  verif.errors  ident.rmse  verif.rmse\n");
    for r in rows {
        out.push_str(&format!(
            "{:<5} {:<6} {:<13.3} {:<13.3} {:<11.4} {:.4}\n",
            r.repetitions,
            r.slots,
            r.identification_line_errors,
            r.verification_line_errors,
            r.identification_rmse,
            r.verification_rmse
        ));
    }
    out
}

#[derive(Serialize)]
struct ConfigRow {
    config: usize,
    objective: f64,
    is_tree: bool,
    hamming_to_truth: usize,
    zero_residual: bool,
}

/// One row per candidate configuration of an exhaustive search.
pub fn export_configurations(ex: &ExhaustiveResult, truth: &[bool], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, (c, &obj)) in ex.configs.iter().zip(&ex.objective).enumerate() {
        w.serialize(ConfigRow {
            config: i,
            objective: obj,
            is_tree: true,
            hamming_to_truth: c.iter().zip(truth).filter(|(a, b)| a != b).count(),
            zero_residual: ex.zero_residual.contains(&i),
        })?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
