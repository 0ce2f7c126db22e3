//! `edge-failover-sim`: batch front-end for the edge-failover simulator.
//!
//! Exit status is 0 on success, 1 for bad input (arguments, scenario files,
//! missing artifacts) and 2 when a run fails or output cannot be written.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;
mod scenario;

use std::fmt;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edge_failover::sim::{run, MetricsRecord, SimError, SimulationConfig, SweepGrid};
use edge_failover::{Deployment, PolicyKind};
use rayon::prelude::*;

use scenario::{parse_axis, Scenario};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "edge-failover-sim", version, about = "Seeded edge-server failure recovery experiments")]
struct Cli {
    /// Worker threads for parallel runs [default: one per core]
    #[arg(long, global = true, env = "EDGE_FAILOVER_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every point of a scenario file
    Run {
        scenario: PathBuf,
        /// Base seed; replication r uses seed + r
        #[arg(long)]
        seed: Option<u64>,
        /// Only run this policy
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Output directory [default: the scenario's, or out/<name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check the latency and tolerance bounds of finished runs
    CheckBounds {
        dir: PathBuf,
        /// Latency threshold for the tolerance check, ms [default: the run's]
        #[arg(long)]
        threshold_ms: Option<f64>,
    },
    /// Sweep failure and deployment ratios from the command line
    Sweep {
        /// Failure ratios: start:stop:step or a comma list
        #[arg(long, default_value = "0.1:0.8:0.1")]
        rho: String,
        /// Deployment ratios: start:stop:step or a comma list
        #[arg(long, default_value = "0.3")]
        mu: String,
        #[arg(long, default_value_t = 300)]
        aps: usize,
        /// Policies to compare [default: all]
        #[arg(long = "policy")]
        policies: Vec<PolicyKind>,
        #[arg(long, default_value_t = 5)]
        replications: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        threshold_ms: Option<f64>,
        /// Write artifacts here instead of printing CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Batch = (Vec<SimulationConfig>, Vec<Result<MetricsRecord, SimError>>);

fn run_grid(grid: &SweepGrid) -> Result<Batch, CliError> {
    let configs = grid.configs();
    for c in &configs {
        c.validate()?;
    }
    let results = configs.par_iter().map(run).collect();
    Ok((configs, results))
}

fn run_scenario(path: PathBuf, seed: Option<u64>, policy: Option<PolicyKind>, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut scenario = Scenario::load(&path)?;
    if let Some(seed) = seed {
        scenario.config.seed = seed;
    }
    if let Some(policy) = policy {
        scenario.policies = vec![policy];
    }
    let dir = out.unwrap_or_else(|| scenario.out_dir());
    let (configs, results) = run_grid(&scenario.grid())?;
    let runs = output::write_batch(
        &dir,
        &scenario.name,
        &scenario.policies,
        scenario.threshold_ms,
        &configs,
        results,
    )?;
    println!("{}: {runs} runs written to {}", scenario.name, dir.display());
    Ok(())
}

fn check_bounds(dir: PathBuf, threshold_ms: Option<f64>) -> Result<(), CliError> {
    if threshold_ms.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
        return Err(CliError::Config("threshold must be positive".into()));
    }
    let tally = output::check_dir(&dir, threshold_ms)?;
    println!(
        "{} runs: latency fail {} skipped {}; tolerance fail {} exceeded {}; report in {}",
        tally.runs,
        tally.latency_fail,
        tally.latency_skipped,
        tally.tolerance_fail,
        tally.tolerance_exceeded,
        dir.join(output::BOUNDS_FILE).display()
    );
    if tally.violations() > 0 {
        println!("{} bound violations", tally.violations());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    rho: &str,
    mu: &str,
    aps: usize,
    policies: Vec<PolicyKind>,
    replications: u64,
    seed: u64,
    horizon: Option<u64>,
    threshold_ms: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let rhos = parse_axis(rho).map_err(|e| CliError::Config(format!("--rho: {e}")))?;
    let mus = parse_axis(mu).map_err(|e| CliError::Config(format!("--mu: {e}")))?;
    let policies = if policies.is_empty() { PolicyKind::ALL.to_vec() } else { policies };
    if replications == 0 {
        return Err(CliError::Config("--replications must be at least 1".into()));
    }
    let mut base = SimulationConfig {
        seed,
        aps,
        ..SimulationConfig::default()
    };
    if let Some(h) = horizon {
        base.horizon = h;
    }
    let grid = SweepGrid {
        base,
        failure_ratios: rhos,
        deployments: mus.into_iter().map(Deployment::Ratio).collect(),
        ap_counts: Vec::new(),
        policies: policies.clone(),
        replications,
    };
    let (configs, results) = run_grid(&grid)?;
    match out {
        Some(dir) => {
            let runs = output::write_batch(&dir, "sweep", &policies, threshold_ms, &configs, results)?;
            println!("sweep: {runs} runs written to {}", dir.display());
            Ok(())
        }
        None => {
            let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            output::print_rows(io::stdout().lock(), &records, threshold_ms)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("worker count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Run {
            scenario,
            seed,
            policy,
            out,
        } => run_scenario(scenario, seed, policy, out),
        Command::CheckBounds { dir, threshold_ms } => check_bounds(dir, threshold_ms),
        Command::Sweep {
            rho,
            mu,
            aps,
            policies,
            replications,
            seed,
            horizon,
            threshold_ms,
            out,
        } => sweep(&rho, &mu, aps, policies, replications, seed, horizon, threshold_ms, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edge-failover-sim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
