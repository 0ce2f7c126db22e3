//! Access points, edge servers, and the coverages that partition the APs
//! among servers.
//!
//! A [`NetworkTopology`] is the pre-failure state of the world: where the
//! servers sit, which APs each of them serves, and the routing tree every
//! coverage uses to carry tasks to its server. It is immutable once built.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current version of the topology JSON document.
pub const TOPOLOGY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub u32);

impl ApId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ApId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl ServerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("need at least 2 access points, got {0}")]
    TooFewAccessPoints(usize),
    #[error("deployment ratio {0} must lie in (0, 1)")]
    InvalidRatio(f64),
    #[error("{servers} servers for {aps} access points: need 1 <= L < M")]
    InvalidServerCount { servers: usize, aps: usize },
    #[error("invalid parameter range `{0}`")]
    InvalidRange(&'static str),
    #[error("no connected placement within {depth_limit} hops after {attempts} attempts")]
    Infeasible { depth_limit: u32, attempts: u32 },
    #[error("{0} is not reachable from any server")]
    Unreachable(ApId),
    #[error("unsupported topology format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed topology: {0}")]
    Malformed(String),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("unknown access point {0}")]
    UnknownAp(ApId),
}

pub type Result<T, E = TopologyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A base station. Its attached users are aggregated into per-AP rates:
/// every user offloads all of its tasks to this AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: ApId,
    pub position: Position,
    /// f_BS, KB/s.
    pub transmit_capacity: f64,
    pub users: u32,
    /// Task arrivals per user, tasks/s.
    pub user_rate: f64,
    /// Mean task size carried over the air, KB.
    pub task_size: f64,
    /// Mean task workload processed at a server, MFLOP.
    pub task_work: f64,
}

impl AccessPoint {
    /// λ_u: data rate of one attached user, KB/s.
    pub fn user_data_rate(&self) -> f64 {
        self.user_rate * self.task_size
    }

    /// Tasks per second admitted by this AP.
    pub fn task_rate(&self) -> f64 {
        f64::from(self.users) * self.user_rate
    }

    /// λ_B: aggregate data rate admitted by this AP, KB/s.
    pub fn data_rate(&self) -> f64 {
        f64::from(self.users) * self.user_data_rate()
    }

    /// Aggregate workload rate admitted by this AP, MFLOP/s.
    pub fn work_rate(&self) -> f64 {
        self.task_rate() * self.task_work
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub id: ServerId,
    /// AP the server is co-located with.
    pub host: ApId,
    /// f_es, MFLOP/s.
    pub compute_capacity: f64,
}

/// Hardware caps on AP and server capacities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityLimits {
    pub max_transmit_capacity: f64,
    pub max_compute_capacity: f64,
}

/// The APs served by one server, with the routing tree toward the host AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub server: ServerId,
    pub host: ApId,
    pub members: BTreeSet<ApId>,
    /// Next hop toward `host` for every member except the host itself.
    pub parent: BTreeMap<ApId, ApId>,
    /// Maximum hop count from a member to the host (d_s).
    pub depth: u32,
}

impl Coverage {
    pub fn contains(&self, ap: ApId) -> bool {
        self.members.contains(&ap)
    }

    /// Pre-failure route from `ap` to the host, both ends included.
    pub fn path_to_root(&self, ap: ApId) -> Option<Vec<ApId>> {
        if !self.contains(ap) {
            return None;
        }
        let mut path = vec![ap];
        let mut cur = ap;
        while let Some(&next) = self.parent.get(&cur) {
            path.push(next);
            cur = next;
            if path.len() > self.members.len() {
                return None;
            }
        }
        Some(path)
    }

    pub fn hops_to_root(&self, ap: ApId) -> Option<u32> {
        self.path_to_root(ap).map(|p| p.len() as u32 - 1)
    }

    pub fn children(&self, ap: ApId) -> impl Iterator<Item = ApId> + '_ {
        self.parent
            .iter()
            .filter(move |(_, &p)| p == ap)
            .map(|(&c, _)| c)
    }

    /// `ap` and every member whose root-ward route passes through it.
    pub fn subtree(&self, ap: ApId) -> BTreeSet<ApId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![ap];
        while let Some(cur) = stack.pop() {
            if out.insert(cur) {
                stack.extend(self.children(cur));
            }
        }
        out
    }

    /// Unique tree path between two members, both ends included.
    pub fn tree_path(&self, from: ApId, to: ApId) -> Option<Vec<ApId>> {
        let up_from = self.path_to_root(from)?;
        let up_to = self.path_to_root(to)?;
        let on_to: BTreeMap<ApId, usize> = up_to.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let (cut, &lca) = up_from
            .iter()
            .enumerate()
            .find(|(_, a)| on_to.contains_key(a))?;
        let mut path = up_from[..=cut].to_vec();
        debug_assert_eq!(path.last(), Some(&lca));
        let down = on_to[&lca];
        path.extend(up_to[..down].iter().rev());
        Some(path)
    }
}

/// Serialized form of a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub format_version: u32,
    pub depth_limit: u32,
    pub limits: CapacityLimits,
    pub aps: Vec<AccessPoint>,
    pub servers: Vec<EdgeServer>,
    pub adjacency: Vec<Vec<ApId>>,
    pub coverages: Vec<Coverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDocument", into = "TopologyDocument")]
pub struct NetworkTopology {
    depth_limit: u32,
    limits: CapacityLimits,
    aps: Vec<AccessPoint>,
    servers: Vec<EdgeServer>,
    adjacency: Vec<Vec<ApId>>,
    coverages: Vec<Coverage>,
    home: Vec<ServerId>,
    hosted: Vec<Option<ServerId>>,
}

impl TryFrom<TopologyDocument> for NetworkTopology {
    type Error = TopologyError;

    fn try_from(doc: TopologyDocument) -> Result<Self> {
        if doc.format_version != TOPOLOGY_FORMAT_VERSION {
            return Err(TopologyError::UnsupportedVersion(doc.format_version));
        }
        NetworkTopology::from_parts(
            doc.aps,
            doc.servers,
            doc.adjacency,
            doc.coverages,
            doc.depth_limit,
            doc.limits,
        )
    }
}

impl From<NetworkTopology> for TopologyDocument {
    fn from(t: NetworkTopology) -> Self {
        TopologyDocument {
            format_version: TOPOLOGY_FORMAT_VERSION,
            depth_limit: t.depth_limit,
            limits: t.limits,
            aps: t.aps,
            servers: t.servers,
            adjacency: t.adjacency,
            coverages: t.coverages,
        }
    }
}

fn malformed(msg: impl Into<String>) -> TopologyError {
    TopologyError::Malformed(msg.into())
}

impl NetworkTopology {
    /// Assembles a topology and checks every structural invariant.
    pub fn from_parts(
        aps: Vec<AccessPoint>,
        servers: Vec<EdgeServer>,
        mut adjacency: Vec<Vec<ApId>>,
        coverages: Vec<Coverage>,
        depth_limit: u32,
        limits: CapacityLimits,
    ) -> Result<Self> {
        let m = aps.len();
        if m < 2 {
            return Err(TopologyError::TooFewAccessPoints(m));
        }
        if servers.is_empty() || servers.len() >= m {
            return Err(TopologyError::InvalidServerCount {
                servers: servers.len(),
                aps: m,
            });
        }
        for (i, ap) in aps.iter().enumerate() {
            if ap.id.index() != i {
                return Err(malformed(format!("AP at index {i} has id {}", ap.id)));
            }
            let cap = ap.transmit_capacity;
            if !(cap > 0.0 && cap <= limits.max_transmit_capacity) {
                return Err(malformed(format!("{} transmit capacity {cap} out of bounds", ap.id)));
            }
            let rates = [ap.user_rate, ap.task_size, ap.task_work];
            if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(malformed(format!("{} has a negative or non-finite rate", ap.id)));
            }
        }
        let mut hosted = vec![None; m];
        for (i, s) in servers.iter().enumerate() {
            if s.id.index() != i {
                return Err(malformed(format!("server at index {i} has id {}", s.id)));
            }
            if s.host.index() >= m {
                return Err(TopologyError::UnknownAp(s.host));
            }
            let cap = s.compute_capacity;
            if !(cap > 0.0 && cap <= limits.max_compute_capacity) {
                return Err(malformed(format!("{} compute capacity {cap} out of bounds", s.id)));
            }
            if hosted[s.host.index()].replace(s.id).is_some() {
                return Err(malformed(format!("two servers share host {}", s.host)));
            }
        }
        if adjacency.len() != m {
            return Err(malformed("adjacency length differs from AP count"));
        }
        for list in adjacency.iter_mut() {
            list.sort();
            list.dedup();
        }
        for (i, list) in adjacency.iter().enumerate() {
            for &n in list {
                if n.index() >= m || n.index() == i {
                    return Err(malformed(format!("bad link b{i} - {n}")));
                }
                if adjacency[n.index()].binary_search(&ApId(i as u32)).is_err() {
                    return Err(malformed(format!("link b{i} - {n} is not symmetric")));
                }
            }
        }
        if !is_connected(&adjacency) {
            return Err(malformed("AP graph is not connected"));
        }
        if coverages.len() != servers.len() {
            return Err(malformed("need exactly one coverage per server"));
        }
        let mut home: Vec<Option<ServerId>> = vec![None; m];
        for (i, cov) in coverages.iter().enumerate() {
            let server = &servers[i];
            if cov.server != server.id || cov.host != server.host {
                return Err(malformed(format!("coverage {i} does not match {}", server.id)));
            }
            if !cov.contains(cov.host) || cov.parent.contains_key(&cov.host) {
                return Err(malformed(format!("coverage of {} is not rooted at its host", cov.server)));
            }
            let mut depth = 0;
            for &ap in &cov.members {
                if ap.index() >= m {
                    return Err(TopologyError::UnknownAp(ap));
                }
                if home[ap.index()].replace(cov.server).is_some() {
                    return Err(malformed(format!("{ap} belongs to two coverages")));
                }
                if let Some(&p) = cov.parent.get(&ap) {
                    if !cov.contains(p) || adjacency[ap.index()].binary_search(&p).is_err() {
                        return Err(malformed(format!("{ap} routes via non-member or non-neighbor {p}")));
                    }
                } else if ap != cov.host {
                    return Err(malformed(format!("{ap} has no route in {}", cov.server)));
                }
                let hops = cov
                    .hops_to_root(ap)
                    .ok_or_else(|| malformed(format!("routing cycle at {ap}")))?;
                depth = depth.max(hops);
            }
            if cov.parent.keys().any(|a| !cov.contains(*a)) {
                return Err(malformed(format!("routes for non-members in {}", cov.server)));
            }
            if depth != cov.depth {
                return Err(malformed(format!("{} depth is {depth}, recorded {}", cov.server, cov.depth)));
            }
            if depth > depth_limit {
                return Err(malformed(format!("{} depth {depth} exceeds limit {depth_limit}", cov.server)));
            }
        }
        let home = home
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.ok_or_else(|| malformed(format!("b{i} is not covered"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            depth_limit,
            limits,
            aps,
            servers,
            adjacency,
            coverages,
            home,
            hosted,
        })
    }

    /// Builds a topology, computing coverages with [`build_coverages`].
    pub fn with_baseline_coverages(
        aps: Vec<AccessPoint>,
        servers: Vec<EdgeServer>,
        adjacency: Vec<Vec<ApId>>,
        depth_limit: u32,
        limits: CapacityLimits,
    ) -> Result<Self> {
        let coverages = assign_coverages(&aps, &servers, &adjacency, |_| true)?.coverages;
        Self::from_parts(aps, servers, adjacency, coverages, depth_limit, limits)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn ap_count(&self) -> usize {
        self.aps.len()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn depth_limit(&self) -> u32 {
        self.depth_limit
    }

    pub fn limits(&self) -> CapacityLimits {
        self.limits
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn servers(&self) -> &[EdgeServer] {
        &self.servers
    }

    pub fn ap(&self, id: ApId) -> Option<&AccessPoint> {
        self.aps.get(id.index())
    }

    pub fn server(&self, id: ServerId) -> Option<&EdgeServer> {
        self.servers.get(id.index())
    }

    pub fn neighbors(&self, ap: ApId) -> &[ApId] {
        &self.adjacency[ap.index()]
    }

    pub fn adjacency(&self) -> &[Vec<ApId>] {
        &self.adjacency
    }

    pub fn are_adjacent(&self, a: ApId, b: ApId) -> bool {
        self.adjacency
            .get(a.index())
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    pub fn coverages(&self) -> &[Coverage] {
        &self.coverages
    }

    pub fn coverage(&self, server: ServerId) -> Option<&Coverage> {
        self.coverages.get(server.index())
    }

    /// Server whose pre-failure coverage contains `ap`.
    pub fn home_server(&self, ap: ApId) -> ServerId {
        self.home[ap.index()]
    }

    /// Server co-located with `ap`, if any.
    pub fn server_at(&self, ap: ApId) -> Option<ServerId> {
        self.hosted.get(ap.index()).copied().flatten()
    }

    pub fn ap_ids(&self) -> impl Iterator<Item = ApId> + '_ {
        self.aps.iter().map(|a| a.id)
    }

    pub fn server_ids(&self) -> impl Iterator<Item = ServerId> + '_ {
        self.servers.iter().map(|s| s.id)
    }

    /// Mean number of APs per coverage, M / L.
    pub fn mean_coverage_size(&self) -> f64 {
        self.aps.len() as f64 / self.servers.len() as f64
    }
}

fn is_connected(adjacency: &[Vec<ApId>]) -> bool {
    if adjacency.is_empty() {
        return true;
    }
    let mut seen = vec![false; adjacency.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for v in &adjacency[u] {
            if !seen[v.index()] {
                seen[v.index()] = true;
                count += 1;
                queue.push_back(v.index());
            }
        }
    }
    count == adjacency.len()
}

/// Modeled per-unit transmission time through an AP, s/KB.
pub(crate) fn nominal_transmit(ap: &AccessPoint) -> f64 {
    1.0 / ap.transmit_capacity
}

/// Modeled per-unit processing time at a server, s/MFLOP.
pub(crate) fn nominal_process(server: &EdgeServer) -> f64 {
    1.0 / server.compute_capacity
}

/// Label ordering used by the coverage builder: hop count, then modeled
/// delay, then server id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    hops: u32,
    delay: f64,
    server: ServerId,
    ap: ApId,
}

impl Label {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.hops
            .cmp(&other.hops)
            .then(self.delay.total_cmp(&other.delay))
            .then(self.server.cmp(&other.server))
    }
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        other.key_cmp(self).then(other.ap.cmp(&self.ap))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Coverages plus the number of label relaxations it took to build them.
#[derive(Debug, Clone)]
pub struct CoverageBuild {
    pub coverages: Vec<Coverage>,
    pub relaxations: u64,
}

/// Assigns every AP to the operational server that minimizes
/// (hop count, modeled delay, server id) and builds shortest-delay trees.
/// Coverages are returned for operational servers only, in id order.
pub fn assign_coverages(
    aps: &[AccessPoint],
    servers: &[EdgeServer],
    adjacency: &[Vec<ApId>],
    operational: impl Fn(ServerId) -> bool,
) -> Result<CoverageBuild> {
    let m = aps.len();
    let mut best: Vec<Option<Label>> = vec![None; m];
    let mut parent: Vec<Option<ApId>> = vec![None; m];
    let mut done = vec![false; m];
    let mut heap = BinaryHeap::new();
    let mut relaxations = 0u64;
    for s in servers.iter().filter(|s| operational(s.id)) {
        let host = s.host;
        if host.index() >= m {
            return Err(TopologyError::UnknownAp(host));
        }
        let label = Label {
            hops: 0,
            delay: nominal_transmit(&aps[host.index()]) + nominal_process(s),
            server: s.id,
            ap: host,
        };
        relaxations += 1;
        if best[host.index()].is_none_or(|b| label.key_cmp(&b) == Ordering::Less) {
            best[host.index()] = Some(label);
            heap.push(label);
        }
    }
    while let Some(label) = heap.pop() {
        let u = label.ap.index();
        if done[u] || best[u] != Some(label) {
            continue;
        }
        done[u] = true;
        for &v in &adjacency[u] {
            if done[v.index()] {
                continue;
            }
            relaxations += 1;
            let cand = Label {
                hops: label.hops + 1,
                delay: label.delay + nominal_transmit(&aps[v.index()]),
                server: label.server,
                ap: v,
            };
            let better = match best[v.index()] {
                None => true,
                Some(b) => match cand.key_cmp(&b) {
                    Ordering::Less => true,
                    Ordering::Equal => parent[v.index()].is_some_and(|p| label.ap < p),
                    Ordering::Greater => false,
                },
            };
            if better {
                best[v.index()] = Some(cand);
                parent[v.index()] = Some(label.ap);
                heap.push(cand);
            }
        }
    }
    let mut coverages: BTreeMap<ServerId, Coverage> = servers
        .iter()
        .filter(|s| operational(s.id))
        .map(|s| {
            (
                s.id,
                Coverage {
                    server: s.id,
                    host: s.host,
                    members: BTreeSet::new(),
                    parent: BTreeMap::new(),
                    depth: 0,
                },
            )
        })
        .collect();
    for (i, label) in best.iter().enumerate() {
        let label = label.ok_or(TopologyError::Unreachable(ApId(i as u32)))?;
        let cov = coverages.get_mut(&label.server).expect("label from operational server");
        cov.members.insert(ApId(i as u32));
        if let Some(p) = parent[i] {
            cov.parent.insert(ApId(i as u32), p);
        }
        cov.depth = cov.depth.max(label.hops);
    }
    Ok(CoverageBuild {
        coverages: coverages.into_values().collect(),
        relaxations,
    })
}

/// Recomputes the baseline coverages of a topology from its APs, servers
/// and links.
pub fn build_coverages(topology: &NetworkTopology) -> Result<Vec<Coverage>> {
    Ok(assign_coverages(&topology.aps, &topology.servers, &topology.adjacency, |_| true)?.coverages)
}

/// Members of the coverage with at least one neighbor outside it.
pub fn edge_aps(coverage: &Coverage, topology: &NetworkTopology) -> BTreeSet<ApId> {
    coverage
        .members
        .iter()
        .copied()
        .filter(|&a| topology.neighbors(a).iter().any(|n| !coverage.contains(*n)))
        .collect()
}

/// Servers whose coverage touches the coverage of `server`.
pub fn neighbor_servers(server: ServerId, topology: &NetworkTopology) -> Result<BTreeSet<ServerId>> {
    let cov = topology
        .coverage(server)
        .ok_or(TopologyError::UnknownServer(server))?;
    Ok(cov
        .members
        .iter()
        .flat_map(|&a| topology.neighbors(a).iter())
        .map(|&n| topology.home_server(n))
        .filter(|&s| s != server)
        .collect())
}

/// How many servers to deploy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deployment {
    /// L = ⌊μ·M⌋.
    Ratio(f64),
    /// A fixed L regardless of M.
    Fixed(usize),
}

impl Deployment {
    pub fn server_count(self, m: usize) -> Result<usize> {
        let l = match self {
            Deployment::Ratio(mu) => {
                if !(mu > 0.0 && mu < 1.0) {
                    return Err(TopologyError::InvalidRatio(mu));
                }
                (mu * m as f64 + 1e-9).floor() as usize
            }
            Deployment::Fixed(l) => l,
        };
        if l == 0 || l >= m {
            return Err(TopologyError::InvalidServerCount { servers: l, aps: m });
        }
        Ok(l)
    }
}

/// Uniform sampling intervals for AP and server parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub users: (u32, u32),
    /// tasks/s per user
    pub user_rate: (f64, f64),
    /// Fraction of time a user offloads; scales the drawn user rate.
    pub activity: f64,
    /// KB
    pub task_size: (f64, f64),
    /// MFLOP
    pub task_work: (f64, f64),
    /// KB/s
    pub transmit_capacity: (f64, f64),
    /// MFLOP/s
    pub compute_capacity: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            users: (0, 1),
            user_rate: (3.0, 5.0),
            activity: 2.0 / 3.0,
            task_size: (0.5, 1.0),
            task_work: (0.5, 1.0),
            // 16 to 24 Mbit/s
            transmit_capacity: (2000.0, 3000.0),
            compute_capacity: (32.0, 48.0),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, (lo, hi): (f64, f64), positive: bool| {
            let ok = lo.is_finite() && hi.is_finite() && lo <= hi && if positive { lo > 0.0 } else { lo >= 0.0 };
            if ok {
                Ok(())
            } else {
                Err(TopologyError::InvalidRange(name))
            }
        };
        if self.users.0 > self.users.1 {
            return Err(TopologyError::InvalidRange("users"));
        }
        check("user_rate", self.user_rate, false)?;
        if !(self.activity > 0.0 && self.activity <= 1.0) {
            return Err(TopologyError::InvalidRange("activity"));
        }
        check("task_size", self.task_size, false)?;
        check("task_work", self.task_work, false)?;
        check("transmit_capacity", self.transmit_capacity, true)?;
        check("compute_capacity", self.compute_capacity, true)
    }

    pub fn limits(&self) -> CapacityLimits {
        CapacityLimits {
            max_transmit_capacity: self.transmit_capacity.1,
            max_compute_capacity: self.compute_capacity.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub aps: usize,
    pub deployment: Deployment,
    pub depth_limit: u32,
    pub ranges: ParamRanges,
    pub max_attempts: u32,
}

impl TopologyParams {
    pub fn new(aps: usize, deployment: Deployment) -> Self {
        Self {
            aps,
            deployment,
            depth_limit: 3,
            ranges: ParamRanges::default(),
            max_attempts: 64,
        }
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Longest edge of the Euclidean minimum spanning tree: the smallest
/// connection radius that makes the geometric graph connected.
fn connectivity_radius(points: &[Position]) -> f64 {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut dist = vec![f64::INFINITY; n];
    dist[0] = 0.0;
    let mut longest = 0.0f64;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
            .expect("vertex left");
        in_tree[u] = true;
        longest = longest.max(dist[u]);
        for v in 0..n {
            if !in_tree[v] {
                dist[v] = dist[v].min(points[u].distance(&points[v]));
            }
        }
    }
    longest
}

fn hop_distances(adjacency: &[Vec<ApId>], sources: &[usize]) -> Vec<u32> {
    let mut dist = vec![u32::MAX; adjacency.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for v in &adjacency[u] {
            if dist[v.index()] == u32::MAX {
                dist[v.index()] = dist[u] + 1;
                queue.push_back(v.index());
            }
        }
    }
    dist
}

/// Greedy k-center placement in the hop metric with a random first site.
fn place_servers(adjacency: &[Vec<ApId>], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = adjacency.len();
    let mut sites = vec![rng.random_range(0..n)];
    let mut dist = hop_distances(adjacency, &sites);
    while sites.len() < count {
        let far = (0..n)
            .filter(|i| !sites.contains(i))
            .map(|i| dist[i])
            .max()
            .expect("free AP left");
        let candidates: Vec<usize> = (0..n).filter(|i| !sites.contains(i) && dist[*i] == far).collect();
        let pick = *candidates.choose(rng).expect("nonempty");
        sites.push(pick);
        let fresh = hop_distances(adjacency, &[pick]);
        for (d, f) in dist.iter_mut().zip(fresh) {
            *d = (*d).min(f);
        }
    }
    sites
}

/// Generates a random geometric AP graph on the unit square with servers
/// placed so every AP is within `depth_limit` hops of one.
pub fn generate_topology(seed: u64, params: &TopologyParams) -> Result<NetworkTopology> {
    let m = params.aps;
    if m < 2 {
        return Err(TopologyError::TooFewAccessPoints(m));
    }
    let l = params.deployment.server_count(m)?;
    params.ranges.validate()?;
    let ranges = &params.ranges;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..params.max_attempts.max(1) {
        let points: Vec<Position> = (0..m)
            .map(|_| Position {
                x: rng.random::<f64>(),
                y: rng.random::<f64>(),
            })
            .collect();
        let radius = connectivity_radius(&points) * (1.0 + 1e-9);
        let adjacency: Vec<Vec<ApId>> = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i && points[i].distance(&points[j]) <= radius)
                    .map(|j| ApId(j as u32))
                    .collect()
            })
            .collect();
        let sites = place_servers(&adjacency, l, &mut rng);
        let aps: Vec<AccessPoint> = points
            .iter()
            .enumerate()
            .map(|(i, &position)| AccessPoint {
                id: ApId(i as u32),
                position,
                transmit_capacity: draw(&mut rng, ranges.transmit_capacity),
                users: rng.random_range(ranges.users.0..=ranges.users.1),
                user_rate: draw(&mut rng, ranges.user_rate) * ranges.activity,
                task_size: draw(&mut rng, ranges.task_size),
                task_work: draw(&mut rng, ranges.task_work),
            })
            .collect();
        let servers: Vec<EdgeServer> = sites
            .iter()
            .enumerate()
            .map(|(i, &host)| EdgeServer {
                id: ServerId(i as u32),
                host: ApId(host as u32),
                compute_capacity: draw(&mut rng, ranges.compute_capacity),
            })
            .collect();
        let reach = hop_distances(&adjacency, &sites);
        if reach.iter().any(|&d| d > params.depth_limit) {
            continue;
        }
        return NetworkTopology::with_baseline_coverages(
            aps,
            servers,
            adjacency,
            params.depth_limit,
            ranges.limits(),
        );
    }
    Err(TopologyError::Infeasible {
        depth_limit: params.depth_limit,
        attempts: params.max_attempts,
    })
}
