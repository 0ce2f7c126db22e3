//! Theoretical quantities checked against simulation output: the
//! approximation ratio, recovery-cost scaling, the number of tolerable
//! failures for a latency threshold and the latency guarantee under a given
//! number of failures.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationStrategy;
use crate::sim::Extremes;
use crate::topology::ServerId;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("optimal delay must be positive, got {0}")]
    ZeroOracleDelay(f64),
    #[error("failure ratio must lie in (0, 1], got {0}")]
    InvalidFailureRatio(f64),
    #[error("need at least 3 network sizes, got {0}")]
    TooFewSizes(usize),
    #[error("counts and sizes must be positive for a log-log fit")]
    NonPositiveSample,
    #[error("latency threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),
    #[error("{failed} failures leave no server out of {servers}")]
    TooManyFailures { failed: usize, servers: usize },
    #[error("{0} must be positive and finite")]
    InvalidInput(&'static str),
    #[error("delay vectors have different lengths")]
    LengthMismatch,
    #[error("no AP was affected by the failures")]
    NothingAffected,
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Measured delay inflation around one failure set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    /// Delay the recovery adds on top of the unaffected APs' pre-failure
    /// delay, per failed server, over the pre-failure delay of an average
    /// coverage among those that absorbed the affected APs.
    pub omega: f64,
    /// Mean delay after a full recomputation over the pre-failure mean.
    pub tau: f64,
}

/// Derives [`Inflation`] from per-AP delays before the failure, after the
/// recovery under test and after a full recomputation.
pub fn measure_inflation(
    before: &[f64],
    recovered: &[f64],
    recomputed: &[f64],
    baseline: &AllocationStrategy,
    recovery: &AllocationStrategy,
    failed: &BTreeSet<ServerId>,
    servers: usize,
) -> Result<Inflation> {
    let m = before.len();
    if recovered.len() != m || recomputed.len() != m || baseline.plans.len() != m || recovery.plans.len() != m {
        return Err(AnalysisError::LengthMismatch);
    }
    if servers == 0 {
        return Err(AnalysisError::InvalidInput("servers"));
    }
    let hit = |i: usize| baseline.plans[i].server().is_some_and(|s| failed.contains(&s));
    let affected: Vec<usize> = (0..m).filter(|&i| hit(i)).collect();
    if affected.is_empty() {
        return Err(AnalysisError::NothingAffected);
    }
    let absorbing: BTreeSet<ServerId> = affected.iter().filter_map(|&i| recovery.plans[i].server()).collect();
    let absorbed_before: Vec<f64> = (0..m)
        .filter(|&i| baseline.plans[i].server().is_some_and(|s| absorbing.contains(&s)))
        .map(|i| before[i])
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // With every affected AP sent to the cloud there is no absorbing
    // coverage; compare against the network mean instead.
    let reference = if absorbed_before.is_empty() { mean(before) } else { mean(&absorbed_before) };
    let untouched: f64 = (0..m).filter(|&i| !hit(i)).map(|i| before[i]).sum();
    let added = recovered.iter().sum::<f64>() - untouched;
    let coverage = m as f64 / servers as f64;
    Ok(Inflation {
        omega: added / (failed.len() as f64 * coverage * reference),
        tau: mean(recomputed) / mean(before),
    })
}

/// Approximation-ratio estimate for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub rho: f64,
    pub omega: f64,
    pub tau: f64,
    pub predicted: f64,
    pub measured: f64,
    /// |measured - predicted|.
    pub gap: f64,
    /// Average number of APs per coverage beyond the host, (M - L) / L.
    pub mean_coverage: f64,
}

impl RatioEstimate {
    /// Whether prediction and measurement agree within `factor`.
    pub fn within_factor(&self, factor: f64) -> bool {
        let r = self.measured / self.predicted;
        r.is_finite() && r <= factor && r >= 1.0 / factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioInputs {
    pub recovery_delay: f64,
    pub optimal_delay: f64,
    pub inflation: Inflation,
    pub rho: f64,
    pub aps: usize,
    pub servers: usize,
}

/// Predicted ratio `(1 + rho (omega - 1)) / tau`.
pub fn predicted_ratio(rho: f64, inflation: Inflation) -> f64 {
    (1.0 + rho * (inflation.omega - 1.0)) / inflation.tau
}

pub fn approximation_ratio(inputs: &RatioInputs) -> Result<RatioEstimate> {
    if !(inputs.optimal_delay > 0.0) {
        return Err(AnalysisError::ZeroOracleDelay(inputs.optimal_delay));
    }
    if inputs.servers == 0 {
        return Err(AnalysisError::InvalidInput("servers"));
    }
    let measured = inputs.recovery_delay / inputs.optimal_delay;
    let predicted = predicted_ratio(inputs.rho, inputs.inflation);
    Ok(RatioEstimate {
        rho: inputs.rho,
        omega: inputs.inflation.omega,
        tau: inputs.inflation.tau,
        predicted,
        measured,
        gap: (measured - predicted).abs(),
        mean_coverage: (inputs.aps as f64 - inputs.servers as f64) / inputs.servers as f64,
    })
}

/// Smallest delay multiplier the recovery can reach for a given failure
/// ratio and recomputation multiplier: `1 + (tau - 1) / rho`.
pub fn omega_lower_bound(rho: f64, tau: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(AnalysisError::InvalidFailureRatio(rho));
    }
    Ok(1.0 + (tau - 1.0) / rho)
}

/// Log-log least-squares fit of recovery cost against network size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Mean count per distinct size, ascending.
    pub sizes: Vec<(usize, f64)>,
}

/// Fits `count ~ c * size^k` over `(size, count)` samples.
pub fn complexity_check(samples: &[(usize, f64)]) -> Result<ComplexityReport> {
    let distinct: BTreeSet<usize> = samples.iter().map(|s| s.0).collect();
    if distinct.len() < 3 {
        return Err(AnalysisError::TooFewSizes(distinct.len()));
    }
    if samples.iter().any(|&(m, c)| m == 0 || !(c > 0.0)) {
        return Err(AnalysisError::NonPositiveSample);
    }
    let xs: Vec<f64> = samples.iter().map(|s| (s.0 as f64).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let exponent = sxy / sxx;
    let sizes = distinct
        .iter()
        .map(|&m| {
            let v: Vec<f64> = samples.iter().filter(|s| s.0 == m).map(|s| s.1).collect();
            (m, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Ok(ComplexityReport {
        exponent,
        intercept: my - exponent * mx,
        r_squared: if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 },
        sizes,
    })
}

/// Capacity, queue and task-size extremes a bound is evaluated with.
/// Queues in KB or MFLOP, capacities per second, task sizes in KB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub transmit_min: f64,
    pub transmit_max: f64,
    pub compute_min: f64,
    pub compute_max: f64,
    pub queue_min: f64,
    pub queue_max: f64,
    pub task_size_min: f64,
    pub task_size_max: f64,
    /// Most AP queues on any route.
    pub route_aps_max: u32,
}

impl BoundInputs {
    pub fn from_extremes(x: &Extremes) -> Self {
        Self {
            transmit_min: x.min_transmit_capacity,
            transmit_max: x.max_transmit_capacity,
            compute_min: x.min_compute_capacity,
            compute_max: x.max_compute_capacity,
            queue_min: x.min_ap_queue.min(x.min_server_queue),
            queue_max: x.max_ap_queue.max(x.max_server_queue),
            task_size_min: x.min_task_size,
            task_size_max: x.max_task_size,
            route_aps_max: x.max_route_aps,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("transmit_min", self.transmit_min),
            ("transmit_max", self.transmit_max),
            ("compute_min", self.compute_min),
            ("compute_max", self.compute_max),
            ("task_size_min", self.task_size_min),
            ("task_size_max", self.task_size_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AnalysisError::InvalidInput(name));
            }
        }
        if !(self.queue_min >= 0.0 && self.queue_min.is_finite()) {
            return Err(AnalysisError::InvalidInput("queue_min"));
        }
        if !(self.queue_max >= 0.0 && self.queue_max.is_finite()) {
            return Err(AnalysisError::InvalidInput("queue_max"));
        }
        Ok(())
    }

    /// Largest over smallest transmit capacity.
    pub fn spread(&self) -> f64 {
        self.transmit_max / self.transmit_min
    }

    /// Fastest server over fastest AP link.
    pub fn fast_ratio(&self) -> f64 {
        self.compute_max / self.transmit_max
    }

    /// Slowest server over slowest AP link.
    pub fn slow_ratio(&self) -> f64 {
        self.compute_min / self.transmit_min
    }

    /// Slowest rate anywhere on a route.
    pub fn slowest_rate(&self) -> f64 {
        self.compute_min.min(self.transmit_min)
    }
}

/// Most extra APs each surviving server can absorb while the mean delay
/// stays within `threshold_secs`.
pub fn max_extra_aps(inputs: &BoundInputs, threshold_secs: f64) -> Result<f64> {
    if !(threshold_secs > 0.0) {
        return Err(AnalysisError::NonPositiveThreshold(threshold_secs));
    }
    inputs.validate()?;
    let nu = inputs.spread();
    Ok((inputs.fast_ratio() * nu * nu * inputs.transmit_min * threshold_secs - inputs.queue_min) / inputs.task_size_min)
}

/// Failures tolerable when each survivor can absorb `extra` APs:
/// `floor(extra L^2 / (M + extra L))`, clipped to `[0, L - 1]`.
pub fn tolerated_failures(extra: f64, aps: usize, servers: usize) -> usize {
    if servers == 0 || !(extra > 0.0) {
        return 0;
    }
    let (m, l) = (aps as f64, servers as f64);
    let s = (extra * l * l / (m + extra * l) + 1e-9).floor();
    (s.max(0.0) as usize).min(servers - 1)
}

/// Number of server failures the network tolerates for a latency threshold.
pub fn tolerance_bound(inputs: &BoundInputs, threshold_secs: f64, aps: usize, servers: usize) -> Result<usize> {
    Ok(tolerated_failures(max_extra_aps(inputs, threshold_secs)?, aps, servers))
}

/// Extra APs per survivor when `failed` of `servers` servers are down.
pub fn extra_aps_after(failed: usize, aps: usize, servers: usize) -> Result<f64> {
    if failed >= servers {
        return Err(AnalysisError::TooManyFailures { failed, servers });
    }
    let m = aps as f64;
    Ok(m / (servers - failed) as f64 - m / servers as f64)
}

/// Guaranteed mean delay with `failed` servers down, seconds.
pub fn latency_bound(failed: usize, aps: usize, servers: usize, inputs: &BoundInputs) -> Result<f64> {
    let extra = extra_aps_after(failed, aps, servers)?;
    inputs.validate()?;
    let hops = 1.0 + f64::from(inputs.route_aps_max);
    Ok(hops * (inputs.queue_max + extra * inputs.task_size_max) / inputs.slowest_rate())
}

/// Every robustness quantity for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBound {
    pub threshold_secs: f64,
    pub fast_ratio: f64,
    pub slow_ratio: f64,
    pub spread: f64,
    pub queue_min: f64,
    pub queue_max: f64,
    pub slowest_rate: f64,
    pub task_size_min: f64,
    pub task_size_max: f64,
    pub route_aps_max: u32,
    /// Extra APs per survivor at the failure count below.
    pub extra_aps: f64,
    pub tolerated: usize,
    pub latency_secs: f64,
}

pub fn robustness(
    inputs: &BoundInputs,
    threshold_secs: f64,
    failed: usize,
    aps: usize,
    servers: usize,
) -> Result<RobustnessBound> {
    Ok(RobustnessBound {
        threshold_secs,
        fast_ratio: inputs.fast_ratio(),
        slow_ratio: inputs.slow_ratio(),
        spread: inputs.spread(),
        queue_min: inputs.queue_min,
        queue_max: inputs.queue_max,
        slowest_rate: inputs.slowest_rate(),
        task_size_min: inputs.task_size_min,
        task_size_max: inputs.task_size_max,
        route_aps_max: inputs.route_aps_max,
        extra_aps: extra_aps_after(failed, aps, servers)?,
        tolerated: tolerance_bound(inputs, threshold_secs, aps, servers)?,
        latency_secs: latency_bound(failed, aps, servers, inputs)?,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or the lengths differ.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
