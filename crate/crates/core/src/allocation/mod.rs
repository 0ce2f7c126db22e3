//! Task allocation strategies: which server each AP uses and the source
//! routes its tasks follow.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ApId, NetworkTopology, ServerId};

mod oracle;

pub use oracle::{
    brute_force_optimal, HorizonReplay, OneStep, OracleError, OracleResult, StrategyEvaluator,
    ORACLE_MAX_ASSIGNMENTS,
};

/// Number of levels a forwarding share may take: shares are multiples of
/// 1/SHARE_LEVELS.
pub const SHARE_LEVELS: u32 = 10;

/// When a strategy was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slot")]
pub enum Epoch {
    PreFailure,
    PostFailure(u64),
    PostRepair(u64),
}

/// A source route. `hops` lists the APs after the source, ending at the
/// host of the assigned server. An empty list means the source is the host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub share: f64,
    pub hops: Vec<ApId>,
}

impl Route {
    pub fn first_hop(&self) -> Option<ApId> {
        self.hops.first().copied()
    }
}

/// One AP's row of the strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApPlan {
    /// Servers this AP's tasks are assigned to (a row of γ).
    pub servers: Vec<ServerId>,
    /// Tasks go to the remote cloud instead of an edge server.
    pub cloud: bool,
    pub routes: Vec<Route>,
}

impl ApPlan {
    pub fn routed(server: ServerId, hops: Vec<ApId>) -> Self {
        Self {
            servers: vec![server],
            cloud: false,
            routes: vec![Route { share: 1.0, hops }],
        }
    }

    pub fn cloud() -> Self {
        Self {
            servers: Vec::new(),
            cloud: true,
            routes: Vec::new(),
        }
    }

    pub fn server(&self) -> Option<ServerId> {
        if self.cloud {
            None
        } else {
            self.servers.first().copied()
        }
    }

    pub fn is_assigned_to(&self, server: ServerId) -> bool {
        !self.cloud && self.servers.contains(&server)
    }

    /// Share of this AP's traffic whose first hop is `next` (p_ij).
    pub fn forwarding_share(&self, next: ApId) -> f64 {
        self.routes
            .iter()
            .filter(|r| r.first_hop() == Some(next))
            .map(|r| r.share)
            .sum()
    }

    /// Neighbors that receive a nonzero share (the nonzero entries of β).
    pub fn forwarders(&self) -> BTreeSet<ApId> {
        self.routes
            .iter()
            .filter(|r| r.share > 0.0)
            .filter_map(Route::first_hop)
            .collect()
    }

    /// Primary route, the one with the largest share.
    pub fn primary_route(&self) -> Option<&Route> {
        self.routes
            .iter()
            .max_by(|a, b| a.share.total_cmp(&b.share))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationStrategy {
    pub epoch: Epoch,
    pub plans: Vec<ApPlan>,
}

impl AllocationStrategy {
    /// Pre-failure strategy: every AP uses its home server over the
    /// coverage tree.
    pub fn baseline(topology: &NetworkTopology) -> Self {
        let plans = topology
            .ap_ids()
            .map(|ap| {
                let server = topology.home_server(ap);
                let path = topology
                    .coverage(server)
                    .and_then(|c| c.path_to_root(ap))
                    .expect("validated topology");
                ApPlan::routed(server, path[1..].to_vec())
            })
            .collect();
        Self {
            epoch: Epoch::PreFailure,
            plans,
        }
    }

    pub fn plan(&self, ap: ApId) -> &ApPlan {
        &self.plans[ap.index()]
    }

    pub fn plan_mut(&mut self, ap: ApId) -> &mut ApPlan {
        &mut self.plans[ap.index()]
    }

    /// γ_il.
    pub fn is_assigned(&self, ap: ApId, server: ServerId) -> bool {
        self.plan(ap).is_assigned_to(server)
    }

    /// APs currently assigned to `server`.
    pub fn assigned_to(&self, server: ServerId) -> Vec<ApId> {
        self.plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_assigned_to(server))
            .map(|(i, _)| ApId(i as u32))
            .collect()
    }

    pub fn cloud_aps(&self) -> usize {
        self.plans.iter().filter(|p| p.cloud).count()
    }
}

/// The constraint a strategy breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Each edge-served AP is assigned exactly one server.
    SingleServer,
    /// Forwarding shares lie on the discrete grid.
    ShareGrid,
    /// Forwarding shares sum to one.
    ShareSum,
    /// AP transmit capacity is within the hardware cap.
    TransmitCapacity,
    /// Server compute capacity is within the hardware cap.
    ComputeCapacity,
    /// Routes follow links, avoid loops and end at the assigned host.
    Routing,
    /// The assigned server is operational.
    Operational,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Constraint::SingleServer => "single-server",
            Constraint::ShareGrid => "share-grid",
            Constraint::ShareSum => "share-sum",
            Constraint::TransmitCapacity => "transmit-capacity",
            Constraint::ComputeCapacity => "compute-capacity",
            Constraint::Routing => "routing",
            Constraint::Operational => "operational",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub ap: Option<ApId>,
    pub server: Option<ServerId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.constraint, self.detail)
    }
}

const SHARE_TOL: f64 = 1e-9;

fn on_grid(share: f64) -> bool {
    let scaled = share * f64::from(SHARE_LEVELS);
    (0.0..=1.0 + SHARE_TOL).contains(&share) && (scaled - scaled.round()).abs() < 1e-6
}

/// Checks a strategy against the allocation constraints. An empty result
/// means the strategy is valid.
pub fn validate_strategy(strategy: &AllocationStrategy, topology: &NetworkTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |constraint, ap, server, detail: String| {
        out.push(Violation {
            constraint,
            ap,
            server,
            detail,
        })
    };
    let limits = topology.limits();
    for ap in topology.aps() {
        if ap.transmit_capacity > limits.max_transmit_capacity {
            push(Constraint::TransmitCapacity, Some(ap.id), None, format!("{} exceeds cap", ap.id));
        }
    }
    for s in topology.servers() {
        if s.compute_capacity > limits.max_compute_capacity {
            push(Constraint::ComputeCapacity, None, Some(s.id), format!("{} exceeds cap", s.id));
        }
    }
    if strategy.plans.len() != topology.ap_count() {
        push(
            Constraint::SingleServer,
            None,
            None,
            format!("{} plans for {} APs", strategy.plans.len(), topology.ap_count()),
        );
        return out;
    }
    for (i, plan) in strategy.plans.iter().enumerate() {
        let ap = ApId(i as u32);
        if plan.cloud {
            if !plan.servers.is_empty() || !plan.routes.is_empty() {
                push(Constraint::SingleServer, Some(ap), None, format!("cloud {ap} also has edge routes"));
            }
            continue;
        }
        let [server] = plan.servers[..] else {
            push(
                Constraint::SingleServer,
                Some(ap),
                None,
                format!("{ap} assigned to {} servers", plan.servers.len()),
            );
            continue;
        };
        let Some(host) = topology.server(server).map(|s| s.host) else {
            push(Constraint::SingleServer, Some(ap), Some(server), format!("{ap} uses unknown {server}"));
            continue;
        };
        let mut sum = 0.0;
        for route in &plan.routes {
            sum += route.share;
            if !on_grid(route.share) {
                push(Constraint::ShareGrid, Some(ap), None, format!("{ap} share {} off grid", route.share));
            }
            let mut seen = BTreeSet::from([ap]);
            let mut prev = ap;
            for &hop in &route.hops {
                if !topology.are_adjacent(prev, hop) {
                    push(Constraint::Routing, Some(ap), Some(server), format!("{ap} route jumps {prev} -> {hop}"));
                    break;
                }
                if !seen.insert(hop) {
                    push(Constraint::Routing, Some(ap), Some(server), format!("{ap} route revisits {hop}"));
                    break;
                }
                prev = hop;
            }
            let end = route.hops.last().copied().unwrap_or(ap);
            if end != host {
                push(
                    Constraint::Routing,
                    Some(ap),
                    Some(server),
                    format!("{ap} route ends at {end}, host of {server} is {host}"),
                );
            }
        }
        if (sum - 1.0).abs() > 1e-6 {
            push(Constraint::ShareSum, Some(ap), None, format!("{ap} shares sum to {sum}"));
        }
    }
    out
}

/// [`validate_strategy`] plus a check that no AP uses a failed server.
pub fn validate_against_failures(
    strategy: &AllocationStrategy,
    topology: &NetworkTopology,
    failed: &BTreeSet<ServerId>,
) -> Vec<Violation> {
    let mut out = validate_strategy(strategy, topology);
    for (i, plan) in strategy.plans.iter().enumerate() {
        if let Some(s) = plan.server().filter(|s| failed.contains(s)) {
            out.push(Violation {
                constraint: Constraint::Operational,
                ap: Some(ApId(i as u32)),
                server: Some(s),
                detail: format!("b{i} uses failed {s}"),
            });
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("no cached fragment for {0}")]
    UnknownServer(ServerId),
}

/// The plans of the APs one server served before it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub server: ServerId,
    pub plans: BTreeMap<ApId, ApPlan>,
}

/// Capture the plans of every AP currently assigned to `server`.
pub fn capture_fragment(strategy: &AllocationStrategy, server: ServerId) -> Fragment {
    Fragment {
        server,
        plans: strategy
            .assigned_to(server)
            .into_iter()
            .map(|ap| (ap, strategy.plan(ap).clone()))
            .collect(),
    }
}

/// Pre-failure fragments kept so a repaired server can take its APs back
/// without recomputation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyCache {
    fragments: BTreeMap<ServerId, Fragment>,
}

impl StrategyCache {
    /// Caches the fragment of every server in `strategy`.
    pub fn capture_all(strategy: &AllocationStrategy, topology: &NetworkTopology) -> Self {
        Self {
            fragments: topology
                .server_ids()
                .map(|s| (s, capture_fragment(strategy, s)))
                .collect(),
        }
    }

    pub fn insert(&mut self, fragment: Fragment) {
        self.fragments.insert(fragment.server, fragment);
    }

    pub fn get(&self, server: ServerId) -> Option<&Fragment> {
        self.fragments.get(&server)
    }

    /// Writes the cached plans back into `strategy`. Returns the number of
    /// entries restored.
    pub fn restore_fragment(&self, strategy: &mut AllocationStrategy, server: ServerId) -> Result<usize, CacheError> {
        let fragment = self.get(server).ok_or(CacheError::UnknownServer(server))?;
        for (&ap, plan) in &fragment.plans {
            *strategy.plan_mut(ap) = plan.clone();
        }
        Ok(fragment.plans.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::fixtures::*;

    #[test]
    fn baseline_is_valid() {
        let t = two_cells();
        let s = AllocationStrategy::baseline(&t);
        assert!(validate_strategy(&s, &t).is_empty());
        assert_eq!(s.plan(ApId(3)).routes[0].hops, vec![ApId(2), ApId(0)]);
        assert!(s.plan(ApId(0)).routes[0].hops.is_empty());
        assert_eq!(s.plan(ApId(3)).forwarding_share(ApId(2)), 1.0);
        assert_eq!(s.plan(ApId(3)).forwarders(), BTreeSet::from([ApId(2)]));
    }

    #[test]
    fn each_constraint_is_detected() {
        let t = two_cells();
        let base = AllocationStrategy::baseline(&t);
        let hits = |s: &AllocationStrategy| -> Vec<Constraint> {
            validate_strategy(s, &t).into_iter().map(|v| v.constraint).collect()
        };

        let mut s = base.clone();
        s.plan_mut(ApId(1)).servers.push(ServerId(1));
        assert_eq!(hits(&s), vec![Constraint::SingleServer]);

        let mut s = base.clone();
        s.plan_mut(ApId(1)).routes[0].share = 0.55;
        assert!(hits(&s).contains(&Constraint::ShareGrid));
        assert!(hits(&s).contains(&Constraint::ShareSum));

        let mut s = base.clone();
        let r = s.plan(ApId(3)).routes[0].clone();
        s.plan_mut(ApId(3)).routes = vec![
            Route { share: 0.6, ..r.clone() },
            Route { share: 0.6, ..r },
        ];
        assert_eq!(hits(&s), vec![Constraint::ShareSum]);

        let mut s = base.clone();
        s.plan_mut(ApId(3)).routes[0].hops = vec![ApId(0)];
        assert_eq!(hits(&s), vec![Constraint::Routing]);

        let mut s = base.clone();
        s.plan_mut(ApId(3)).routes[0].hops = vec![ApId(2), ApId(3), ApId(2), ApId(0)];
        assert_eq!(hits(&s), vec![Constraint::Routing]);

        let mut s = base;
        s.plan_mut(ApId(3)).servers = vec![ServerId(1)];
        assert_eq!(hits(&s), vec![Constraint::Routing]);
    }

    #[test]
    fn capacity_caps_are_checked() {
        let t = two_cells();
        let mut doc: crate::topology::TopologyDocument = t.into();
        doc.limits.max_compute_capacity = 39.0;
        assert!(NetworkTopology::try_from(doc).is_err());
    }

    #[test]
    fn split_route_on_grid_is_valid() {
        let t = two_cells();
        let mut s = AllocationStrategy::baseline(&t);
        s.plan_mut(ApId(3)).servers = vec![ServerId(1)];
        s.plan_mut(ApId(3)).routes = vec![
            Route { share: 0.7, hops: vec![ApId(5), ApId(4)] },
            Route { share: 0.3, hops: vec![ApId(6), ApId(4)] },
        ];
        assert!(validate_strategy(&s, &t).is_empty());
        assert!((s.plan(ApId(3)).forwarding_share(ApId(5)) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn failed_server_use_is_flagged() {
        let t = two_cells();
        let s = AllocationStrategy::baseline(&t);
        let v = validate_against_failures(&s, &t, &BTreeSet::from([ServerId(1)]));
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|v| v.constraint == Constraint::Operational));
    }

    #[test]
    fn cache_restores_verbatim() {
        let t = two_cells();
        let base = AllocationStrategy::baseline(&t);
        let cache = StrategyCache::capture_all(&base, &t);
        let mut s = base.clone();
        for ap in s.assigned_to(ServerId(0)) {
            *s.plan_mut(ap) = ApPlan::cloud();
        }
        assert_eq!(cache.restore_fragment(&mut s, ServerId(0)), Ok(4));
        assert_eq!(s.plans, base.plans);
        assert_eq!(
            cache.restore_fragment(&mut s, ServerId(9)),
            Err(CacheError::UnknownServer(ServerId(9)))
        );
    }
}
