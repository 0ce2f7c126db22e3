//! Failure-oriented recovery: when a server fails, the APs it served route
//! their tasks back through their own coverage tree to an edge AP and from
//! there into a neighboring coverage. When it comes back, the cached
//! pre-failure plans are restored as they were.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{ApPlan, AllocationStrategy, CacheError, StrategyCache};
use crate::delay_model::{ap_delay, CloudModel, QueueState};
use crate::topology::{edge_aps, ApId, Coverage, NetworkTopology, ServerId};

#[derive(Debug, Error, PartialEq)]
pub enum FodtError {
    #[error("{0} is not part of the coverage")]
    NotAMember(ApId),
    #[error("coverage of {0} has no edge AP")]
    NoEdgeAp(ServerId),
    #[error("{0} has no neighbor in an operational coverage")]
    NoAccessingAp(ApId),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// How an affected AP picks its exit from the failed coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FodtMode {
    /// Compare every (edge AP, external neighbor) pair of the coverage by
    /// tree-path delay plus the neighbor's known delay.
    #[default]
    BoundaryScan,
    /// Walk to the nearest edge AP in the tree, then take its best neighbor.
    NearestEdge,
}

/// What one affected AP ended up doing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ApRecovery {
    /// The AP links a host directly and now uses that server.
    Direct { server: ServerId },
    /// Tasks go through the tree to `edge_ap`, cross to `accessing_ap` and
    /// follow its route to `target`.
    Reversed {
        path: Vec<ApId>,
        edge_ap: ApId,
        accessing_ap: ApId,
        target: ServerId,
    },
    /// No operational server is reachable; tasks go to the cloud.
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub failed_server: ServerId,
    pub decisions: BTreeMap<ApId, ApRecovery>,
}

/// Work spent by a recovery step: delay evaluations and strategy entries
/// written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCost {
    pub evaluations: u64,
    pub entries: u64,
}

impl RecoveryCost {
    pub fn total(&self) -> u64 {
        self.evaluations + self.entries
    }
}

impl std::ops::AddAssign for RecoveryCost {
    fn add_assign(&mut self, rhs: Self) {
        self.evaluations += rhs.evaluations;
        self.entries += rhs.entries;
    }
}

/// Read-only view of the network a recovery step may consult.
#[derive(Debug, Clone, Copy)]
pub struct RecoveryContext<'a> {
    pub topology: &'a NetworkTopology,
    /// Queue state of the previous slot.
    pub queues: &'a QueueState,
    /// Servers down after the event being handled.
    pub failed: &'a BTreeSet<ServerId>,
    pub cloud: &'a CloudModel,
}

impl RecoveryContext<'_> {
    fn operational(&self, server: ServerId) -> bool {
        !self.failed.contains(&server)
    }

    fn hop_delay(&self, ap: ApId) -> f64 {
        self.queues.hop_delay(ap, self.topology)
    }

    /// Delay of reaching `server` through its host, one hop away from `ap`.
    pub(crate) fn direct_delay(&self, ap: ApId, server: ServerId) -> f64 {
        let host = self.topology.servers()[server.index()].host;
        self.hop_delay(ap) + self.hop_delay(host) + self.queues.server_delay(server, self.topology)
    }

    /// Operational servers hosted on `ap`'s neighbors, best known delay
    /// first, then lower id.
    pub(crate) fn adjacent_servers(&self, ap: ApId) -> Vec<(f64, ServerId)> {
        let mut out: Vec<(f64, ServerId)> = self
            .topology
            .neighbors(ap)
            .iter()
            .filter_map(|&n| self.topology.server_at(n))
            .filter(|&s| self.operational(s))
            .map(|s| (self.direct_delay(ap, s), s))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }
}

/// Tree path from `ap` to the nearest edge AP: first searched in `ap`'s
/// subtree, then from successive ancestors. Ties go to the lower id.
pub fn reverse_route(ap: ApId, coverage: &Coverage, topology: &NetworkTopology) -> Result<Vec<ApId>, FodtError> {
    if !coverage.contains(ap) {
        return Err(FodtError::NotAMember(ap));
    }
    let edges = edge_aps(coverage, topology);
    if edges.is_empty() {
        return Err(FodtError::NoEdgeAp(coverage.server));
    }
    let mut anchor = ap;
    loop {
        // Breadth-first over the subtree gives (hops, id) order per level.
        let mut queue = VecDeque::from([anchor]);
        let mut best: Option<ApId> = None;
        let mut frontier_depth = vec![(anchor, 0u32)].into_iter().collect::<BTreeMap<_, _>>();
        while let Some(cur) = queue.pop_front() {
            if edges.contains(&cur) {
                let d = frontier_depth[&cur];
                match best {
                    Some(b) if frontier_depth[&b] < d => break,
                    Some(b) if b < cur => {}
                    _ => best = Some(cur),
                }
                continue;
            }
            let d = frontier_depth[&cur];
            for child in coverage.children(cur) {
                frontier_depth.insert(child, d + 1);
                queue.push_back(child);
            }
        }
        if let Some(e) = best {
            return Ok(coverage.tree_path(ap, e).expect("members share a tree"));
        }
        anchor = *coverage.parent.get(&anchor).expect("an edge AP exists above");
    }
}

/// External neighbor of `edge_ap` with the lowest known delay, and the
/// server it uses. Ties go to the lower AP id.
pub fn select_accessing_ap(
    edge_ap: ApId,
    coverage: &Coverage,
    strategy: &AllocationStrategy,
    ctx: &RecoveryContext<'_>,
) -> Result<(ApId, ServerId), FodtError> {
    candidates(edge_ap, coverage, strategy, ctx)
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(x, s, _)| (x, s))
        .ok_or(FodtError::NoAccessingAp(edge_ap))
}

/// External neighbors of `edge_ap` served by an operational server, with
/// their server and known delay.
fn candidates<'a>(
    edge_ap: ApId,
    coverage: &'a Coverage,
    strategy: &'a AllocationStrategy,
    ctx: &'a RecoveryContext<'a>,
) -> impl Iterator<Item = (ApId, ServerId, f64)> + 'a {
    ctx.topology
        .neighbors(edge_ap)
        .iter()
        .copied()
        .filter(|x| !coverage.contains(*x))
        .filter_map(move |x| {
            let server = strategy.plan(x).server().filter(|&s| ctx.operational(s))?;
            Some((x, server, ap_delay(x, strategy, ctx.topology, ctx.queues, ctx.cloud)))
        })
}

/// Route of `path` (source first) continued through `accessing` along its
/// current primary route. None if the result revisits an AP.
fn compose(path: &[ApId], accessing: ApId, strategy: &AllocationStrategy) -> Option<Vec<ApId>> {
    let tail = &strategy.plan(accessing).primary_route()?.hops;
    let hops: Vec<ApId> = path[1..]
        .iter()
        .copied()
        .chain(std::iter::once(accessing))
        .chain(tail.iter().copied())
        .collect();
    let mut seen = BTreeSet::from([path[0]]);
    hops.iter().all(|h| seen.insert(*h)).then_some(hops)
}

/// Delay from each coverage member back to `ap` over the tree, summed hop
/// delays of the path, both ends included.
fn tree_delays(ap: ApId, coverage: &Coverage, ctx: &RecoveryContext<'_>) -> BTreeMap<ApId, (f64, ApId)> {
    let mut out = BTreeMap::from([(ap, (ctx.hop_delay(ap), ap))]);
    let mut queue = VecDeque::from([ap]);
    while let Some(cur) = queue.pop_front() {
        let base = out[&cur].0;
        let up = coverage.parent.get(&cur).copied();
        for next in up.into_iter().chain(coverage.children(cur)) {
            if let std::collections::btree_map::Entry::Vacant(v) = out.entry(next) {
                v.insert((base + ctx.hop_delay(next), cur));
                queue.push_back(next);
            }
        }
    }
    out
}

struct Exit {
    delay: f64,
    edge_ap: ApId,
    accessing_ap: ApId,
    target: ServerId,
    path: Vec<ApId>,
    hops: Vec<ApId>,
}

fn boundary_scan(
    ap: ApId,
    coverage: &Coverage,
    edges: &BTreeSet<ApId>,
    strategy: &AllocationStrategy,
    ctx: &RecoveryContext<'_>,
    cost: &mut RecoveryCost,
) -> Option<(ApRecovery, Vec<ApId>)> {
    let delays = tree_delays(ap, coverage, ctx);
    cost.evaluations += delays.len() as u64;
    let mut best: Option<Exit> = None;
    for &e in edges {
        let path = coverage.tree_path(ap, e).expect("members share a tree");
        let to_edge = delays[&e].0;
        for (x, server, known) in candidates(e, coverage, strategy, ctx) {
            cost.evaluations += 1;
            let total = to_edge + known;
            let better = best.as_ref().is_none_or(|b| {
                total < b.delay || (total == b.delay && (e, x) < (b.edge_ap, b.accessing_ap))
            });
            if better {
                if let Some(hops) = compose(&path, x, strategy) {
                    best = Some(Exit {
                        delay: total,
                        edge_ap: e,
                        accessing_ap: x,
                        target: server,
                        path: path.clone(),
                        hops,
                    });
                }
            }
        }
    }
    best.map(|b| {
        (
            ApRecovery::Reversed {
                path: b.path,
                edge_ap: b.edge_ap,
                accessing_ap: b.accessing_ap,
                target: b.target,
            },
            b.hops,
        )
    })
}

fn nearest_edge(
    ap: ApId,
    coverage: &Coverage,
    strategy: &AllocationStrategy,
    ctx: &RecoveryContext<'_>,
    cost: &mut RecoveryCost,
) -> Option<(ApRecovery, Vec<ApId>)> {
    let path = reverse_route(ap, coverage, ctx.topology).ok()?;
    cost.evaluations += path.len() as u64;
    let edge_ap = *path.last().expect("nonempty path");
    cost.evaluations += candidates(edge_ap, coverage, strategy, ctx).count() as u64;
    let (accessing_ap, target) = select_accessing_ap(edge_ap, coverage, strategy, ctx).ok()?;
    let hops = compose(&path, accessing_ap, strategy)?;
    Some((
        ApRecovery::Reversed {
            path,
            edge_ap,
            accessing_ap,
            target,
        },
        hops,
    ))
}

/// Re-routes every AP assigned to `failed`. Only those APs' plans change.
/// Neighbor delays come from `ctx.queues`, the previous slot's state.
pub fn on_failure(
    failed: ServerId,
    strategy: &mut AllocationStrategy,
    ctx: &RecoveryContext<'_>,
    mode: FodtMode,
) -> (RecoveryPlan, RecoveryCost) {
    let affected = strategy.assigned_to(failed);
    let snapshot = strategy.clone();
    let mut cost = RecoveryCost::default();
    let mut decisions = BTreeMap::new();
    let mut edge_cache: BTreeMap<ServerId, BTreeSet<ApId>> = BTreeMap::new();
    for ap in affected {
        let home = ctx.topology.home_server(ap);
        let coverage = ctx.topology.coverage(home).expect("home coverage");
        let adjacent = ctx.topology.neighbors(ap).len();
        cost.evaluations += adjacent as u64;
        let (decision, plan) = if let Some(&(_, server)) = ctx.adjacent_servers(ap).first() {
            let host = ctx.topology.servers()[server.index()].host;
            (ApRecovery::Direct { server }, ApPlan::routed(server, vec![host]))
        } else {
            let found = match mode {
                FodtMode::BoundaryScan => {
                    let edges = edge_cache
                        .entry(home)
                        .or_insert_with(|| edge_aps(coverage, ctx.topology));
                    boundary_scan(ap, coverage, edges, &snapshot, ctx, &mut cost)
                }
                FodtMode::NearestEdge => nearest_edge(ap, coverage, &snapshot, ctx, &mut cost),
            };
            match found {
                Some((decision @ ApRecovery::Reversed { target, .. }, hops)) => {
                    (decision, ApPlan::routed(target, hops))
                }
                _ => (ApRecovery::Cloud, ApPlan::cloud()),
            }
        };
        *strategy.plan_mut(ap) = plan;
        cost.entries += 1;
        decisions.insert(ap, decision);
    }
    (
        RecoveryPlan {
            failed_server: failed,
            decisions,
        },
        cost,
    )
}

/// Restores the cached plans of `repaired`'s pre-failure APs.
pub fn on_repair(
    repaired: ServerId,
    strategy: &mut AllocationStrategy,
    cache: &StrategyCache,
) -> Result<RecoveryCost, FodtError> {
    let entries = cache.restore_fragment(strategy, repaired)?;
    Ok(RecoveryCost {
        evaluations: 0,
        entries: entries as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{validate_against_failures, StrategyCache};
    use crate::topology::fixtures::*;

    fn ctx<'a>(t: &'a NetworkTopology, q: &'a QueueState, failed: &'a BTreeSet<ServerId>) -> RecoveryContext<'a> {
        static CLOUD: CloudModel = CloudModel {
            base_latency_ms: 100.0,
            backhaul: 50.0,
        };
        RecoveryContext {
            topology: t,
            queues: q,
            failed,
            cloud: &CLOUD,
        }
    }

    /// Two-coverage layout from the recovery walk-through. s0 on b1 covers
    /// b0..b3 with b3 hanging off b2; b3 borders b4 and b5 of s1 (host b6).
    ///
    /// ```text
    ///   b0 - b1(s0) - b2 - b3 - b4 - b6(s1)
    ///                        \- b5 -/
    /// ```
    fn walkthrough() -> NetworkTopology {
        topology(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (3, 5), (4, 6), (5, 6)], &[1, 6], 3)
    }

    #[test]
    fn reverse_route_follows_the_tree_outward() {
        let t = walkthrough();
        let cov = t.coverage(ServerId(0)).unwrap();
        assert_eq!(cov.members, [0, 1, 2, 3].map(ApId).into_iter().collect());
        assert_eq!(reverse_route(ApId(3), cov, &t).unwrap(), vec![ApId(3)]);
        assert_eq!(reverse_route(ApId(2), cov, &t).unwrap(), vec![ApId(2), ApId(3)]);
        let full = reverse_route(ApId(1), cov, &t).unwrap();
        let mut stored = cov.path_to_root(ApId(3)).unwrap();
        stored.reverse();
        assert_eq!(full, stored);
        assert_eq!(
            reverse_route(ApId(0), cov, &t).unwrap(),
            vec![ApId(0), ApId(1), ApId(2), ApId(3)]
        );
    }

    #[test]
    fn reverse_route_climbs_when_subtree_is_closed() {
        // b2 is a leaf with no external link; the way out is via b1 -> b3.
        let t = topology(6, &[(0, 1), (1, 2), (1, 3), (3, 4), (4, 5)], &[0, 5], 3);
        let cov = t.coverage(ServerId(0)).unwrap();
        assert!(cov.contains(ApId(3)));
        assert_eq!(
            reverse_route(ApId(2), cov, &t).unwrap(),
            vec![ApId(2), ApId(1), ApId(3)]
        );
        let lone = topology(3, &[(0, 1), (1, 2)], &[0], 2);
        assert_eq!(
            reverse_route(ApId(2), &lone.coverages()[0], &lone).unwrap_err(),
            FodtError::NoEdgeAp(ServerId(0))
        );
        assert_eq!(
            reverse_route(ApId(5), cov, &t).unwrap_err(),
            FodtError::NotAMember(ApId(5))
        );
    }

    #[test]
    fn accessing_ap_picks_lower_delay() {
        let t = walkthrough();
        let s = AllocationStrategy::baseline(&t);
        let none = BTreeSet::new();
        let cov = t.coverage(ServerId(0)).unwrap();
        let mut q = QueueState::empty(&t);
        // b4 delay 3 s, b5 delay 5 s at 20 KB/s.
        q.ap[4] = 60.0;
        q.ap[5] = 100.0;
        let c = ctx(&t, &q, &none);
        assert_eq!(select_accessing_ap(ApId(3), cov, &s, &c).unwrap(), (ApId(4), ServerId(1)));
        q.ap[4] = 120.0;
        let c = ctx(&t, &q, &none);
        assert_eq!(select_accessing_ap(ApId(3), cov, &s, &c).unwrap(), (ApId(5), ServerId(1)));
    }

    #[test]
    fn accessing_ap_ties_go_to_lower_id() {
        let t = walkthrough();
        let s = AllocationStrategy::baseline(&t);
        let none = BTreeSet::new();
        let q = QueueState::empty(&t);
        let c = ctx(&t, &q, &none);
        let d4 = ap_delay(ApId(4), &s, &t, &q, c.cloud);
        let d5 = ap_delay(ApId(5), &s, &t, &q, c.cloud);
        assert_eq!(d4, d5);
        let cov = t.coverage(ServerId(0)).unwrap();
        assert_eq!(select_accessing_ap(ApId(3), cov, &s, &c).unwrap().0, ApId(4));
        let failed = BTreeSet::from([ServerId(1)]);
        let c = ctx(&t, &q, &failed);
        assert_eq!(
            select_accessing_ap(ApId(3), cov, &s, &c).unwrap_err(),
            FodtError::NoAccessingAp(ApId(3))
        );
    }

    #[test]
    fn walkthrough_failure_reroutes_into_neighbor() {
        let t = walkthrough();
        let base = AllocationStrategy::baseline(&t);
        let mut s = base.clone();
        let failed = BTreeSet::from([ServerId(0)]);
        let mut q = QueueState::empty(&t);
        q.ap[4] = 40.0;
        let c = ctx(&t, &q, &failed);
        for mode in [FodtMode::BoundaryScan, FodtMode::NearestEdge] {
            let mut s2 = base.clone();
            let (plan, cost) = on_failure(ServerId(0), &mut s2, &c, mode);
            assert_eq!(plan.decisions.len(), 4);
            assert_eq!(cost.entries, 4);
            assert_eq!(
                s2.plan(ApId(2)).routes[0].hops,
                vec![ApId(3), ApId(5), ApId(6)],
                "{mode:?}"
            );
            assert_eq!(
                plan.decisions[&ApId(2)],
                ApRecovery::Reversed {
                    path: vec![ApId(2), ApId(3)],
                    edge_ap: ApId(3),
                    accessing_ap: ApId(5),
                    target: ServerId(1),
                }
            );
            assert!(validate_against_failures(&s2, &t, &failed).is_empty());
            s = s2;
        }
        for ap in 4..7 {
            assert_eq!(s.plan(ApId(ap)), base.plan(ApId(ap)));
        }
    }

    #[test]
    fn direct_link_takes_the_fast_path() {
        // s0 on b0 covers only b1; b1 also touches the host of s1.
        let t = topology(4, &[(0, 1), (1, 2), (2, 3)], &[0, 2], 2);
        let base = AllocationStrategy::baseline(&t);
        let covered = base.assigned_to(ServerId(0));
        assert_eq!(covered, vec![ApId(0), ApId(1)]);
        let failed = BTreeSet::from([ServerId(0)]);
        let q = QueueState::empty(&t);
        let mut s = base.clone();
        let (plan, _) = on_failure(ServerId(0), &mut s, &ctx(&t, &q, &failed), FodtMode::BoundaryScan);
        assert_eq!(plan.decisions[&ApId(1)], ApRecovery::Direct { server: ServerId(1) });
        assert_eq!(s.plan(ApId(1)).routes[0].hops, vec![ApId(2)]);
        // b0 has to go through b1.
        assert!(matches!(plan.decisions[&ApId(0)], ApRecovery::Reversed { .. }));
        assert!(validate_against_failures(&s, &t, &failed).is_empty());
    }

    #[test]
    fn isolated_coverage_falls_back_to_cloud() {
        let t = topology(3, &[(0, 1), (1, 2)], &[0], 2);
        let failed = BTreeSet::from([ServerId(0)]);
        let q = QueueState::empty(&t);
        let mut s = AllocationStrategy::baseline(&t);
        let (plan, _) = on_failure(ServerId(0), &mut s, &ctx(&t, &q, &failed), FodtMode::BoundaryScan);
        assert!(plan.decisions.values().all(|d| *d == ApRecovery::Cloud));
        assert_eq!(s.cloud_aps(), 3);
        assert!(validate_against_failures(&s, &t, &failed).is_empty());
    }

    #[test]
    fn repair_restores_and_keeps_other_failures() {
        // Three cells in a row; fail the outer two, repair one.
        let t = topology(
            9,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8)],
            &[1, 4, 7],
            2,
        );
        let base = AllocationStrategy::baseline(&t);
        let cache = StrategyCache::capture_all(&base, &t);
        let q = QueueState::empty(&t);
        let mut s = base.clone();
        let failed = BTreeSet::from([ServerId(0), ServerId(2)]);
        let c = ctx(&t, &q, &failed);
        on_failure(ServerId(0), &mut s, &c, FodtMode::BoundaryScan);
        on_failure(ServerId(2), &mut s, &c, FodtMode::BoundaryScan);
        let after_both = s.clone();
        let cost = on_repair(ServerId(0), &mut s, &cache).unwrap();
        assert_eq!(cost.entries, 3);
        for ap in 0..9 {
            let expected = if ap < 3 { &base } else { &after_both };
            assert_eq!(s.plan(ApId(ap)), expected.plan(ApId(ap)));
        }
        on_repair(ServerId(2), &mut s, &cache).unwrap();
        assert_eq!(s.plans, base.plans);
    }

    #[test]
    fn plan_serializes() {
        let plan = RecoveryPlan {
            failed_server: ServerId(0),
            decisions: BTreeMap::from([(ApId(1), ApRecovery::Direct { server: ServerId(2) })]),
        };
        let text = serde_json::to_string(&plan).unwrap();
        assert!(text.contains("\"kind\":\"direct\""));
        let back: RecoveryPlan = serde_json::from_str(&text).unwrap();
        assert_eq!(back, plan);
    }
}
