//! Recovery policies the simulator can run: FODT and the baselines it is
//! compared against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{ApPlan, AllocationStrategy, StrategyCache};
use crate::fodt::{self, FodtError, FodtMode, RecoveryContext, RecoveryCost, RecoveryPlan};
use crate::topology::{assign_coverages, ApId, NetworkTopology, ServerId};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Fodt(#[from] FodtError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fodt,
    CloudAssistant,
    Greedy,
    GlobalRecompute,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Fodt,
        PolicyKind::CloudAssistant,
        PolicyKind::Greedy,
        PolicyKind::GlobalRecompute,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fodt => "fodt",
            PolicyKind::CloudAssistant => "cloud_assistant",
            PolicyKind::Greedy => "greedy",
            PolicyKind::GlobalRecompute => "global_recompute",
        }
    }

    /// Creates the policy for a run that starts from `baseline`.
    pub fn build(
        self,
        topology: &NetworkTopology,
        baseline: &AllocationStrategy,
        params: &PolicyParams,
    ) -> Box<dyn RecoveryPolicy> {
        match self {
            PolicyKind::Fodt => Box::new(Fodt {
                mode: params.fodt_mode,
                cache: StrategyCache::capture_all(baseline, topology),
            }),
            PolicyKind::CloudAssistant => Box::new(CloudAssistant {
                cache: StrategyCache::capture_all(baseline, topology),
            }),
            PolicyKind::Greedy => Box::new(Greedy {
                horizon: params.greedy_horizon,
            }),
            PolicyKind::GlobalRecompute => Box::new(GlobalRecompute),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| PolicyError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub fodt_mode: FodtMode,
    /// Longest walk the greedy policy takes before giving up, hops.
    pub greedy_horizon: usize,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            fodt_mode: FodtMode::default(),
            greedy_horizon: 6,
        }
    }
}

/// Result of handling one failure or repair event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecoveryOutcome {
    pub cost: RecoveryCost,
    pub plan: Option<RecoveryPlan>,
}

/// A failure-recovery policy. Both hooks edit `strategy` in place and must
/// leave it valid against `ctx.failed`.
pub trait RecoveryPolicy: Send {
    fn kind(&self) -> PolicyKind;

    fn on_failure(
        &mut self,
        failed: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError>;

    fn on_repair(
        &mut self,
        repaired: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError>;
}

pub struct Fodt {
    pub mode: FodtMode,
    pub cache: StrategyCache,
}

impl RecoveryPolicy for Fodt {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Fodt
    }

    fn on_failure(
        &mut self,
        failed: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        let (plan, cost) = fodt::on_failure(failed, strategy, ctx, self.mode);
        Ok(RecoveryOutcome {
            cost,
            plan: Some(plan),
        })
    }

    fn on_repair(
        &mut self,
        repaired: ServerId,
        strategy: &mut AllocationStrategy,
        _ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        Ok(RecoveryOutcome {
            cost: fodt::on_repair(repaired, strategy, &self.cache)?,
            plan: None,
        })
    }
}

/// Sends every AP of a failed server to the cloud until it is repaired.
pub struct CloudAssistant {
    pub cache: StrategyCache,
}

impl RecoveryPolicy for CloudAssistant {
    fn kind(&self) -> PolicyKind {
        PolicyKind::CloudAssistant
    }

    fn on_failure(
        &mut self,
        failed: ServerId,
        strategy: &mut AllocationStrategy,
        _ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        let affected = strategy.assigned_to(failed);
        for &ap in &affected {
            *strategy.plan_mut(ap) = ApPlan::cloud();
        }
        Ok(RecoveryOutcome {
            cost: RecoveryCost {
                evaluations: 0,
                entries: affected.len() as u64,
            },
            plan: None,
        })
    }

    fn on_repair(
        &mut self,
        repaired: ServerId,
        strategy: &mut AllocationStrategy,
        _ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        Ok(RecoveryOutcome {
            cost: fodt::on_repair(repaired, strategy, &self.cache)?,
            plan: None,
        })
    }
}

/// Hop-by-hop forwarding toward the highest-capacity neighbor.
pub struct Greedy {
    pub horizon: usize,
}

impl Greedy {
    /// Greedy route from `ap`, or None if it runs past the horizon or into a
    /// dead end.
    fn walk(&self, ap: ApId, ctx: &RecoveryContext<'_>, cost: &mut RecoveryCost) -> Option<ApPlan> {
        let topo = ctx.topology;
        let mut hops = Vec::new();
        let mut visited = vec![ap];
        let mut cur = ap;
        loop {
            cost.evaluations += topo.neighbors(cur).len() as u64;
            if let Some(&(_, server)) = ctx.adjacent_servers(cur).first() {
                // Hosts on earlier hops would have ended the walk there.
                hops.push(topo.servers()[server.index()].host);
                return Some(ApPlan::routed(server, hops));
            }
            if hops.len() >= self.horizon {
                return None;
            }
            let next = topo
                .neighbors(cur)
                .iter()
                .copied()
                .filter(|n| !visited.contains(n))
                .min_by(|&a, &b| {
                    let cap = |x: ApId| topo.aps()[x.index()].transmit_capacity;
                    let delay = |x: ApId| ctx.queues.hop_delay(x, topo);
                    cap(b)
                        .total_cmp(&cap(a))
                        .then(delay(a).total_cmp(&delay(b)))
                        .then(a.cmp(&b))
                })?;
            visited.push(next);
            hops.push(next);
            cur = next;
        }
    }
}

impl RecoveryPolicy for Greedy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Greedy
    }

    fn on_failure(
        &mut self,
        failed: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        let mut cost = RecoveryCost::default();
        for ap in strategy.assigned_to(failed) {
            let plan = self.walk(ap, ctx, &mut cost).unwrap_or_else(ApPlan::cloud);
            *strategy.plan_mut(ap) = plan;
            cost.entries += 1;
        }
        Ok(RecoveryOutcome { cost, plan: None })
    }

    /// Rebuilds the repaired server's coverage from scratch: every home AP
    /// is re-walked toward the host over the coverage tree.
    fn on_repair(
        &mut self,
        repaired: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        let topo = ctx.topology;
        let coverage = topo.coverage(repaired).expect("known server");
        let mut cost = RecoveryCost::default();
        for &ap in &coverage.members {
            let path = coverage.path_to_root(ap).expect("member");
            for hop in &path {
                cost.evaluations += topo.neighbors(*hop).len() as u64;
            }
            *strategy.plan_mut(ap) = ApPlan::routed(repaired, path[1..].to_vec());
            cost.entries += 1;
        }
        Ok(RecoveryOutcome { cost, plan: None })
    }
}

/// Recomputes every AP's server and route from scratch on every event.
pub struct GlobalRecompute;

impl GlobalRecompute {
    fn recompute(strategy: &mut AllocationStrategy, ctx: &RecoveryContext<'_>) -> RecoveryCost {
        let topo = ctx.topology;
        let build = assign_coverages(topo.aps(), topo.servers(), topo.adjacency(), |s| {
            !ctx.failed.contains(&s)
        });
        let mut cost = RecoveryCost {
            evaluations: 0,
            entries: topo.ap_count() as u64,
        };
        match build {
            Ok(build) => {
                cost.evaluations = build.relaxations;
                for cov in &build.coverages {
                    for &ap in &cov.members {
                        let path = cov.path_to_root(ap).expect("member");
                        *strategy.plan_mut(ap) = ApPlan::routed(cov.server, path[1..].to_vec());
                    }
                }
            }
            Err(_) => {
                for plan in &mut strategy.plans {
                    *plan = ApPlan::cloud();
                }
            }
        }
        cost
    }
}

impl RecoveryPolicy for GlobalRecompute {
    fn kind(&self) -> PolicyKind {
        PolicyKind::GlobalRecompute
    }

    fn on_failure(
        &mut self,
        _failed: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        Ok(RecoveryOutcome {
            cost: Self::recompute(strategy, ctx),
            plan: None,
        })
    }

    fn on_repair(
        &mut self,
        _repaired: ServerId,
        strategy: &mut AllocationStrategy,
        ctx: &RecoveryContext<'_>,
    ) -> Result<RecoveryOutcome, PolicyError> {
        Ok(RecoveryOutcome {
            cost: Self::recompute(strategy, ctx),
            plan: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::allocation::validate_against_failures;
    use crate::delay_model::{ap_delay, CloudModel, QueueState};
    use crate::topology::fixtures::*;

    const CLOUD: CloudModel = CloudModel {
        base_latency_ms: 100.0,
        backhaul: 50.0,
    };

    fn run_cycle(kind: PolicyKind, t: &NetworkTopology, q: &QueueState) -> (AllocationStrategy, RecoveryCost, RecoveryCost) {
        let base = AllocationStrategy::baseline(t);
        let mut policy = kind.build(t, &base, &PolicyParams::default());
        let mut s = base.clone();
        let failed = BTreeSet::from([ServerId(0)]);
        let ctx = RecoveryContext { topology: t, queues: q, failed: &failed, cloud: &CLOUD };
        let down = policy.on_failure(ServerId(0), &mut s, &ctx).unwrap().cost;
        assert!(validate_against_failures(&s, t, &failed).is_empty(), "{kind}");
        let after = s.clone();
        let none = BTreeSet::new();
        let ctx = RecoveryContext { failed: &none, ..ctx };
        let up = policy.on_repair(ServerId(0), &mut s, &ctx).unwrap().cost;
        assert!(validate_against_failures(&s, t, &none).is_empty(), "{kind}");
        (after, down, up)
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("Global-Recompute".parse::<PolicyKind>().unwrap(), PolicyKind::GlobalRecompute);
        assert!("robust".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn cloud_assistant_marks_and_restores() {
        let t = two_cells();
        let q = QueueState::empty(&t);
        let (after, down, up) = run_cycle(PolicyKind::CloudAssistant, &t, &q);
        assert_eq!(after.cloud_aps(), 4);
        assert_eq!(down.total() + up.total(), 8);
    }

    #[test]
    fn greedy_matches_fodt_on_a_single_exit() {
        // Line: b0 - b1(s0) - b2 - b3(s1). b0 has the weakest radio, so the
        // walk from b1 heads for b2, the only way out.
        let mut aps: Vec<_> = (0..4).map(|i| ap(i, 20.0)).collect();
        aps[0].transmit_capacity = 16.0;
        let servers = [1, 3]
            .iter()
            .enumerate()
            .map(|(i, &h)| crate::topology::EdgeServer {
                id: ServerId(i as u32),
                host: ApId(h),
                compute_capacity: 40.0,
            })
            .collect();
        let t = NetworkTopology::with_baseline_coverages(aps, servers, links(4, &[(0, 1), (1, 2), (2, 3)]), 2, LIMITS)
            .unwrap();
        assert_eq!(t.coverage(ServerId(0)).unwrap().members.len(), 3);
        let q = QueueState::empty(&t);
        let (g, _, _) = run_cycle(PolicyKind::Greedy, &t, &q);
        let (f, _, _) = run_cycle(PolicyKind::Fodt, &t, &q);
        assert_eq!(g.plans, f.plans);
    }

    #[test]
    fn greedy_prefers_capacity_over_delay() {
        // b0(s0) - b1; b1 links b2 (fast radio) and b3 (slow radio), each of
        // which links a host: b2 - b4(s1), b3 - b5(s2). s1 has a long queue.
        let mut aps: Vec<_> = (0..6).map(|i| ap(i, 20.0)).collect();
        aps[2].transmit_capacity = 24.0;
        aps[3].transmit_capacity = 16.0;
        let servers = [0, 4, 5]
            .iter()
            .enumerate()
            .map(|(i, &h)| crate::topology::EdgeServer {
                id: ServerId(i as u32),
                host: ApId(h),
                compute_capacity: 40.0,
            })
            .collect();
        let t = NetworkTopology::with_baseline_coverages(
            aps,
            servers,
            links(6, &[(0, 1), (1, 2), (1, 3), (2, 4), (3, 5)]),
            3,
            LIMITS,
        )
        .unwrap();
        assert_eq!(t.home_server(ApId(1)), ServerId(0));
        let mut q = QueueState::empty(&t);
        q.server[1] = 200.0;
        let (g, _, _) = run_cycle(PolicyKind::Greedy, &t, &q);
        let (f, _, _) = run_cycle(PolicyKind::Fodt, &t, &q);
        assert_eq!(g.plan(ApId(1)).server(), Some(ServerId(1)));
        assert_eq!(f.plan(ApId(1)).server(), Some(ServerId(2)));
        let dg = ap_delay(ApId(1), &g, &t, &q, &CLOUD);
        let df = ap_delay(ApId(1), &f, &t, &q, &CLOUD);
        assert!(dg >= df, "greedy {dg} fodt {df}");
    }

    #[test]
    fn repair_costs_order() {
        let t = two_cells();
        let q = QueueState::empty(&t);
        let (_, _, greedy_up) = run_cycle(PolicyKind::Greedy, &t, &q);
        let (_, _, fodt_up) = run_cycle(PolicyKind::Fodt, &t, &q);
        assert!(greedy_up.total() > 0);
        assert_eq!(fodt_up.total(), 4);
        assert!(greedy_up.total() > fodt_up.total());
    }

    #[test]
    fn global_recompute_without_failures_is_baseline() {
        let t = two_cells();
        let q = QueueState::empty(&t);
        let mut s = AllocationStrategy::baseline(&t);
        let none = BTreeSet::new();
        let ctx = RecoveryContext { topology: &t, queues: &q, failed: &none, cloud: &CLOUD };
        let cost = GlobalRecompute::recompute(&mut s, &ctx);
        assert_eq!(s, AllocationStrategy::baseline(&t));
        assert_eq!(cost.entries, 7);
        let all = BTreeSet::from([ServerId(0), ServerId(1)]);
        let ctx = RecoveryContext { failed: &all, ..ctx };
        GlobalRecompute::recompute(&mut s, &ctx);
        assert_eq!(s.cloud_aps(), 7);
    }

    #[test]
    fn every_policy_round_trips_on_two_cells() {
        let t = two_cells();
        let q = QueueState::empty(&t);
        for kind in PolicyKind::ALL {
            let (after, down, up) = run_cycle(kind, &t, &q);
            assert!(down.total() > 0 && up.total() > 0, "{kind}");
            assert!(after.assigned_to(ServerId(0)).is_empty(), "{kind}");
        }
    }
}
