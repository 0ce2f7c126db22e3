//! Per-run result rows and bound checks.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `policy` | recovery policy name |
//! | `rho` | configured failure ratio |
//! | `mu` | server deployment ratio |
//! | `m` | number of APs |
//! | `seed` | run seed |
//! | `mean_delay_ms` | mean task delay over measured slots |
//! | `convergence_count` | total recovery cost over all events |
//! | `convergence_ms` | that cost at the configured cost unit |
//! | `bound_flags` | `latency=<flag>;tolerance=<flag>` |
//!
//! Flags are `pass`, `fail`, `exceeded` (more failures than tolerated and
//! the threshold was crossed) or `skipped` (bound undefined for the run).

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::analysis::{latency_bound, tolerance_bound, BoundInputs};
use crate::sim::MetricsRecord;

pub const CSV_COLUMNS: [&str; 9] = [
    "policy",
    "rho",
    "mu",
    "m",
    "seed",
    "mean_delay_ms",
    "convergence_count",
    "convergence_ms",
    "bound_flags",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Pass,
    Fail,
    Exceeded,
    Skipped,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Pass => "pass",
            Flag::Fail => "fail",
            Flag::Exceeded => "exceeded",
            Flag::Skipped => "skipped",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of both robustness checks on one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub failed: usize,
    pub latency_bound_ms: Option<f64>,
    pub latency: Flag,
    pub threshold_ms: Option<f64>,
    pub tolerated: Option<usize>,
    pub tolerance: Flag,
}

impl BoundCheck {
    /// True unless a bound that applies to the run was broken.
    pub fn holds(&self) -> bool {
        self.latency != Flag::Fail && self.tolerance != Flag::Fail
    }

    pub fn flags(&self) -> String {
        format!("latency={};tolerance={}", self.latency, self.tolerance)
    }
}

/// Checks a run against the latency guarantee for its peak failure count
/// and, when a threshold is given, against the failure tolerance for it.
pub fn check_bounds(record: &MetricsRecord, threshold_ms: Option<f64>) -> BoundCheck {
    let inputs = BoundInputs::from_extremes(&record.extremes);
    let failed = record.max_failed;
    let bound = latency_bound(failed, record.aps, record.servers, &inputs).ok().map(|s| s * 1000.0);
    let latency = match bound {
        Some(b) if record.mean_delay_ms <= b => Flag::Pass,
        Some(_) => Flag::Fail,
        None => Flag::Skipped,
    };
    let tolerated = threshold_ms.and_then(|t| tolerance_bound(&inputs, t / 1000.0, record.aps, record.servers).ok());
    let tolerance = match (threshold_ms, tolerated) {
        (Some(t), Some(s)) => {
            let within = record.mean_delay_ms <= t;
            match (failed <= s, within) {
                (_, true) => Flag::Pass,
                (true, false) => Flag::Fail,
                (false, false) => Flag::Exceeded,
            }
        }
        _ => Flag::Skipped,
    };
    BoundCheck {
        failed,
        latency_bound_ms: bound,
        latency,
        threshold_ms,
        tolerated,
        tolerance,
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub policy: String,
    pub rho: f64,
    pub mu: f64,
    pub m: usize,
    pub seed: u64,
    pub mean_delay_ms: f64,
    pub convergence_count: u64,
    pub convergence_ms: f64,
    pub bound_flags: String,
}

impl RunRow {
    pub fn new(record: &MetricsRecord, check: &BoundCheck) -> Self {
        Self {
            policy: record.policy.name().to_owned(),
            rho: record.failure_ratio,
            mu: record.deployment_ratio,
            m: record.aps,
            seed: record.seed,
            mean_delay_ms: record.mean_delay_ms,
            convergence_count: record.convergence_count(),
            convergence_ms: record.convergence_ms(),
            bound_flags: check.flags(),
        }
    }
}

pub fn write_csv<W: io::Write>(out: W, rows: &[RunRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<RunRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
