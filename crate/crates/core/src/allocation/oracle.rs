//! Exhaustive search for the delay-minimizing allocation on small networks.

use std::collections::{BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use thiserror::Error;

use super::{AllocationStrategy, ApPlan, Epoch};
use crate::delay_model::{ap_delay, offered_loads, server_offered_loads, total_delay, Arrivals, CloudModel, QueueState};
use crate::topology::{nominal_transmit, ApId, NetworkTopology, ServerId};

/// Largest number of complete assignments the oracle will enumerate.
pub const ORACLE_MAX_ASSIGNMENTS: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{candidates}^{aps} assignments exceed the enumeration budget")]
    TooLarge { aps: usize, candidates: usize },
    #[error("every server has failed")]
    NoOperationalServer,
}

/// Scores a candidate strategy. Lower is better.
pub trait StrategyEvaluator {
    fn evaluate(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> f64;
}

/// Total delay after one slot driven by the long-run mean arrival rates.
#[derive(Debug, Clone)]
pub struct OneStep<'a> {
    pub queues: &'a QueueState,
    pub slot_secs: f64,
    pub cloud: CloudModel,
}

impl OneStep<'_> {
    fn stepped(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> QueueState {
        let Arrivals { data, work } = Arrivals::mean(topology);
        let mut q = self.queues.clone();
        q.step(
            topology,
            &offered_loads(strategy, &data),
            &server_offered_loads(strategy, topology.server_count(), &work),
            |_| false,
            self.slot_secs,
        );
        q
    }

    /// Delay of every AP after the step, seconds.
    pub fn ap_delays(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> Vec<f64> {
        let q = self.stepped(strategy, topology);
        topology
            .ap_ids()
            .map(|ap| ap_delay(ap, strategy, topology, &q, &self.cloud))
            .collect()
    }
}

impl StrategyEvaluator for OneStep<'_> {
    fn evaluate(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> f64 {
        let q = self.stepped(strategy, topology);
        total_delay(strategy, topology, &q, &self.cloud)
    }
}

/// Mean per-slot total delay when a fixed arrival trace is replayed from a
/// queue snapshot.
#[derive(Debug, Clone)]
pub struct HorizonReplay<'a> {
    pub start: &'a QueueState,
    pub trace: &'a [Arrivals],
    pub failed: &'a BTreeSet<ServerId>,
    pub slot_secs: f64,
    pub cloud: CloudModel,
}

impl HorizonReplay<'_> {
    /// Mean delay of every AP over the trace, seconds.
    pub fn ap_delays(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> Vec<f64> {
        let mut q = self.start.clone();
        let mut sums = vec![0.0; topology.ap_count()];
        for slot in self.trace {
            self.advance(&mut q, strategy, topology, slot);
            for (sum, ap) in sums.iter_mut().zip(topology.ap_ids()) {
                *sum += ap_delay(ap, strategy, topology, &q, &self.cloud);
            }
        }
        let n = self.trace.len().max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    fn advance(&self, q: &mut QueueState, strategy: &AllocationStrategy, topology: &NetworkTopology, slot: &Arrivals) {
        q.step(
            topology,
            &offered_loads(strategy, &slot.data),
            &server_offered_loads(strategy, topology.server_count(), &slot.work),
            |s| self.failed.contains(&s),
            self.slot_secs,
        );
    }
}

impl StrategyEvaluator for HorizonReplay<'_> {
    fn evaluate(&self, strategy: &AllocationStrategy, topology: &NetworkTopology) -> f64 {
        let mut q = self.start.clone();
        let mut sum = 0.0;
        for slot in self.trace {
            self.advance(&mut q, strategy, topology, slot);
            sum += total_delay(strategy, topology, &q, &self.cloud);
        }
        sum / self.trace.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub strategy: AllocationStrategy,
    pub score: f64,
    pub evaluated: u64,
}

/// Shortest (hops, modeled delay) route from every AP to `host`, as the hop
/// list after the source.
fn routes_to(host: ApId, topology: &NetworkTopology) -> Vec<Vec<ApId>> {
    let m = topology.ap_count();
    let mut best = vec![(u32::MAX, f64::INFINITY); m];
    let mut next = vec![None; m];
    let mut heap = BinaryHeap::new();
    let key = |hops: u32, delay: f64| (hops, (delay * 1e12) as u64);
    best[host.index()] = (0, 0.0);
    heap.push(Reverse((key(0, 0.0), host)));
    let mut done = vec![false; m];
    while let Some(Reverse((_, u))) = heap.pop() {
        if std::mem::replace(&mut done[u.index()], true) {
            continue;
        }
        let (hops, delay) = best[u.index()];
        for &v in topology.neighbors(u) {
            // Cost of v's path includes transmitting through u.
            let cand = (hops + 1, delay + nominal_transmit(&topology.aps()[u.index()]));
            let cur = best[v.index()];
            if !done[v.index()] && key(cand.0, cand.1) < key(cur.0, cur.1) {
                best[v.index()] = cand;
                next[v.index()] = Some(u);
                heap.push(Reverse((key(cand.0, cand.1), v)));
            }
        }
    }
    (0..m)
        .map(|i| {
            let mut hops = Vec::new();
            let mut cur = ApId(i as u32);
            while let Some(n) = next[cur.index()] {
                hops.push(n);
                cur = n;
            }
            hops
        })
        .collect()
}

/// Enumerates every assignment of each AP to one operational server (over
/// its shortest route) or to the cloud, and returns the one the evaluator
/// scores lowest. Ties keep the first assignment in lexicographic order,
/// with the cloud ordered after every server.
pub fn brute_force_optimal(
    topology: &NetworkTopology,
    failed: &BTreeSet<ServerId>,
    evaluator: &impl StrategyEvaluator,
) -> Result<OracleResult, OracleError> {
    let candidates: Vec<ServerId> = topology.server_ids().filter(|s| !failed.contains(s)).collect();
    if candidates.is_empty() {
        return Err(OracleError::NoOperationalServer);
    }
    let m = topology.ap_count();
    let radix = candidates.len() + 1;
    let too_large = || OracleError::TooLarge { aps: m, candidates: radix };
    let total = (radix as u64)
        .checked_pow(m as u32)
        .ok_or_else(too_large)?;
    if total > ORACLE_MAX_ASSIGNMENTS {
        return Err(too_large());
    }
    let options: Vec<Vec<ApPlan>> = {
        let per_server: Vec<Vec<Vec<ApId>>> = candidates
            .iter()
            .map(|&s| routes_to(topology.server(s).expect("known").host, topology))
            .collect();
        (0..m)
            .map(|i| {
                candidates
                    .iter()
                    .zip(&per_server)
                    .map(|(&s, routes)| ApPlan::routed(s, routes[i].clone()))
                    .chain(std::iter::once(ApPlan::cloud()))
                    .collect()
            })
            .collect()
    };
    let mut digits = vec![0usize; m];
    let mut strategy = AllocationStrategy {
        epoch: Epoch::PreFailure,
        plans: options.iter().map(|o| o[0].clone()).collect(),
    };
    let mut best: Option<(f64, AllocationStrategy)> = None;
    let mut evaluated = 0;
    loop {
        let score = evaluator.evaluate(&strategy, topology);
        evaluated += 1;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, strategy.clone()));
        }
        // Advance the mixed-radix counter; the last AP varies fastest.
        let mut pos = m;
        loop {
            if pos == 0 {
                let (score, strategy) = best.expect("at least one evaluation");
                return Ok(OracleResult {
                    strategy,
                    score,
                    evaluated,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < radix {
                strategy.plans[pos] = options[pos][digits[pos]].clone();
                break;
            }
            digits[pos] = 0;
            strategy.plans[pos] = options[pos][0].clone();
        }
    }
}
