//! Run artifacts: per-policy CSV, full records and summaries.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use edge_failover::report::{check_bounds, write_csv, BoundCheck, Flag, RunRow};
use edge_failover::sim::{MetricsRecord, SimError, SimulationConfig};
use edge_failover::PolicyKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RECORDS_FILE: &str = "records.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BOUNDS_FILE: &str = "bounds.json";

pub fn csv_name(policy: PolicyKind) -> String {
    format!("{}.csv", policy.name())
}

/// Everything `check-bounds` needs to re-evaluate a finished batch.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub scenario: String,
    pub threshold_ms: Option<f64>,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Serialize)]
struct FailedRun {
    index: usize,
    policy: PolicyKind,
    seed: u64,
    rho: f64,
    error: String,
}

#[derive(Debug, Serialize)]
struct Group {
    policy: PolicyKind,
    rho: f64,
    mu: f64,
    m: usize,
    runs: usize,
    mean_delay_ms: f64,
    sd_delay_ms: f64,
    mean_convergence_count: f64,
    mean_convergence_ms: f64,
    bounds_held: usize,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    /// False when some runs failed; their rows are missing from the CSV.
    complete: bool,
    runs: usize,
    threshold_ms: Option<f64>,
    failed_runs: Vec<FailedRun>,
    groups: Vec<Group>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_error(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_error(path, e))
}

/// Rows for finished runs, in input order.
pub fn rows(records: &[MetricsRecord], threshold_ms: Option<f64>) -> Vec<(RunRow, BoundCheck)> {
    records
        .iter()
        .map(|r| {
            let check = check_bounds(r, threshold_ms);
            (RunRow::new(r, &check), check)
        })
        .collect()
}

fn group(records: &[MetricsRecord], checks: &[BoundCheck]) -> Vec<Group> {
    let mut order = Vec::new();
    let mut members: BTreeMap<(PolicyKind, u64, u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = (r.policy, r.failure_ratio.to_bits(), r.deployment_ratio.to_bits(), r.aps);
        members.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        members.get_mut(&key).expect("just inserted").push(i);
    }
    order
        .into_iter()
        .map(|key| {
            let idx = &members[&key];
            let n = idx.len() as f64;
            let mean = |f: &dyn Fn(&MetricsRecord) -> f64| idx.iter().map(|&i| f(&records[i])).sum::<f64>() / n;
            let delay = mean(&|r| r.mean_delay_ms);
            let var = idx.iter().map(|&i| (records[i].mean_delay_ms - delay).powi(2)).sum::<f64>() / n;
            let first = &records[idx[0]];
            Group {
                policy: first.policy,
                rho: first.failure_ratio,
                mu: first.deployment_ratio,
                m: first.aps,
                runs: idx.len(),
                mean_delay_ms: delay,
                sd_delay_ms: var.sqrt(),
                mean_convergence_count: mean(&|r| r.convergence_count() as f64),
                mean_convergence_ms: mean(&|r| r.convergence_ms()),
                bounds_held: idx.iter().filter(|&&i| checks[i].holds()).count(),
            }
        })
        .collect()
}

/// Writes all artifacts for a batch. Failed runs are listed in the summary
/// and reported as a runtime error once everything else is on disk.
pub fn write_batch(
    dir: &Path,
    scenario: &str,
    policies: &[PolicyKind],
    threshold_ms: Option<f64>,
    configs: &[SimulationConfig],
    results: Vec<Result<MetricsRecord, SimError>>,
) -> Result<usize, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut records = Vec::new();
    let mut failed_runs = Vec::new();
    for (index, (config, result)) in configs.iter().zip(results).enumerate() {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failed_runs.push(FailedRun {
                index,
                policy: config.policy,
                seed: config.seed,
                rho: config.failure_ratio,
                error: e.to_string(),
            }),
        }
    }
    let (rows, checks): (Vec<RunRow>, Vec<BoundCheck>) = rows(&records, threshold_ms).into_iter().unzip();
    for &policy in policies {
        let path = dir.join(csv_name(policy));
        let mine: Vec<RunRow> = rows.iter().filter(|r| r.policy == policy.name()).cloned().collect();
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        write_csv(BufWriter::new(file), &mine).map_err(|e| io_error(&path, e))?;
    }
    let summary = Summary {
        scenario,
        complete: failed_runs.is_empty(),
        runs: records.len(),
        threshold_ms,
        groups: group(&records, &checks),
        failed_runs,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let failed = summary.failed_runs.len();
    write_json(
        &dir.join(RECORDS_FILE),
        &RunArtifacts {
            scenario: scenario.to_owned(),
            threshold_ms,
            records,
        },
    )?;
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} runs failed; partial results in {}",
            configs.len(),
            dir.display()
        )));
    }
    Ok(summary.runs)
}

#[derive(Debug, Serialize)]
struct BoundRow {
    policy: PolicyKind,
    seed: u64,
    rho: f64,
    mu: f64,
    m: usize,
    mean_delay_ms: f64,
    #[serde(flatten)]
    check: BoundCheck,
}

#[derive(Debug, Default, Serialize)]
pub struct BoundTally {
    pub runs: usize,
    pub latency_fail: usize,
    pub latency_skipped: usize,
    pub tolerance_fail: usize,
    pub tolerance_exceeded: usize,
}

impl BoundTally {
    pub fn violations(&self) -> usize {
        self.latency_fail + self.tolerance_fail
    }
}

#[derive(Debug, Serialize)]
struct BoundReport<'a> {
    scenario: &'a str,
    threshold_ms: Option<f64>,
    tally: &'a BoundTally,
    runs: Vec<BoundRow>,
}

/// Re-checks every run in `dir` and writes the report next to it.
pub fn check_dir(dir: &Path, threshold_ms: Option<f64>) -> Result<BoundTally, CliError> {
    let path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("missing run artifacts {}: {e}", path.display())))?;
    let artifacts: RunArtifacts =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let threshold_ms = threshold_ms.or(artifacts.threshold_ms);
    let mut tally = BoundTally::default();
    let runs: Vec<BoundRow> = artifacts
        .records
        .iter()
        .map(|r| {
            let check = check_bounds(r, threshold_ms);
            tally.runs += 1;
            tally.latency_fail += usize::from(check.latency == Flag::Fail);
            tally.latency_skipped += usize::from(check.latency == Flag::Skipped);
            tally.tolerance_fail += usize::from(check.tolerance == Flag::Fail);
            tally.tolerance_exceeded += usize::from(check.tolerance == Flag::Exceeded);
            BoundRow {
                policy: r.policy,
                seed: r.seed,
                rho: r.failure_ratio,
                mu: r.deployment_ratio,
                m: r.aps,
                mean_delay_ms: r.mean_delay_ms,
                check,
            }
        })
        .collect();
    write_json(
        &dir.join(BOUNDS_FILE),
        &BoundReport {
            scenario: &artifacts.scenario,
            threshold_ms,
            tally: &tally,
            runs,
        },
    )?;
    Ok(tally)
}

/// All rows as one CSV on `out`, for sweeps printed to the terminal.
pub fn print_rows(out: impl io::Write, records: &[MetricsRecord], threshold_ms: Option<f64>) -> Result<(), CliError> {
    let rows: Vec<RunRow> = rows(records, threshold_ms).into_iter().map(|(r, _)| r).collect();
    write_csv(out, &rows).map_err(|e| CliError::Runtime(e.to_string()))
}
