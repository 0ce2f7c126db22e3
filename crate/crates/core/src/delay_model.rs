//! Slotted fluid-queue delay model.
//!
//! Every AP keeps a transmission queue in KB and every server a processing
//! queue in MFLOP. Each slot a queue grows by its offered load and drains at
//! its capacity, clamped at zero. The delay of a task is the time to drain
//! the queues it meets on its route plus the server queue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::AllocationStrategy;
use crate::topology::{ApId, NetworkTopology, ServerId};

#[derive(Debug, Error, PartialEq)]
pub enum DelayError {
    #[error("capacity must be positive, got {0}")]
    ZeroCapacity(f64),
    #[error("{ap} is not assigned to {server}")]
    NotAssigned { ap: ApId, server: ServerId },
}

/// Load offered to one AP's transmission queue, KB/s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OfferedLoad {
    /// Traffic of the AP's own users that it sends toward an edge server.
    pub from_users: f64,
    /// Traffic neighbors forward to this AP as their first hop.
    pub from_neighbors: f64,
}

impl OfferedLoad {
    pub fn total(&self) -> f64 {
        self.from_users + self.from_neighbors
    }
}

/// Rates admitted by every AP during one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrivals {
    /// KB/s.
    pub data: Vec<f64>,
    /// MFLOP/s.
    pub work: Vec<f64>,
}

impl Arrivals {
    /// Long-run mean rates.
    pub fn mean(topology: &NetworkTopology) -> Self {
        Self {
            data: topology.aps().iter().map(|a| a.data_rate()).collect(),
            work: topology.aps().iter().map(|a| a.work_rate()).collect(),
        }
    }
}

/// Offered loads for every AP, given the data rate each AP admits this
/// slot. Only the first hop of a route is loaded by the source.
pub fn offered_loads(strategy: &AllocationStrategy, admitted: &[f64]) -> Vec<OfferedLoad> {
    let mut loads = vec![OfferedLoad::default(); strategy.plans.len()];
    for (i, plan) in strategy.plans.iter().enumerate() {
        if plan.cloud {
            continue;
        }
        loads[i].from_users += admitted[i];
        for route in &plan.routes {
            if let Some(next) = route.first_hop() {
                loads[next.index()].from_neighbors += route.share * admitted[i];
            }
        }
    }
    loads
}

/// Mean offered load at one AP under its users' long-run data rates.
pub fn ap_offered_load(ap: ApId, strategy: &AllocationStrategy, topology: &NetworkTopology) -> OfferedLoad {
    let rates: Vec<f64> = topology.aps().iter().map(|a| a.data_rate()).collect();
    offered_loads(strategy, &rates)[ap.index()]
}

/// Work offered to every server, given each AP's admitted work rate.
pub fn server_offered_loads(strategy: &AllocationStrategy, server_count: usize, admitted_work: &[f64]) -> Vec<f64> {
    let mut loads = vec![0.0; server_count];
    for (i, plan) in strategy.plans.iter().enumerate() {
        if let Some(s) = plan.server() {
            loads[s.index()] += admitted_work[i];
        }
    }
    loads
}

/// One slot of a Lindley queue: `max(0, queue + (offered - capacity) * slot)`.
pub fn queue_update(queue: f64, offered: f64, capacity: f64, slot_secs: f64) -> f64 {
    (queue + (offered - capacity) * slot_secs).max(0.0)
}

/// Time to drain `queue` at `capacity`, seconds.
pub fn transmission_delay(queue: f64, capacity: f64) -> Result<f64, DelayError> {
    if capacity > 0.0 {
        Ok(queue / capacity)
    } else {
        Err(DelayError::ZeroCapacity(capacity))
    }
}

/// Time for a server to work off `queue`, seconds.
pub fn processing_delay(queue: f64, capacity: f64) -> Result<f64, DelayError> {
    transmission_delay(queue, capacity)
}

/// Latency of sending one task to the remote cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudModel {
    /// Fixed round trip to the cloud, ms.
    pub base_latency_ms: f64,
    /// Backhaul rate available to one AP, KB/s.
    pub backhaul: f64,
}

impl Default for CloudModel {
    fn default() -> Self {
        Self {
            base_latency_ms: 100.0,
            backhaul: 50.0,
        }
    }
}

impl CloudModel {
    pub fn delay_secs(&self, task_size: f64) -> f64 {
        self.base_latency_ms / 1000.0 + task_size / self.backhaul
    }
}

/// Backlog of every AP and server queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// KB waiting at each AP.
    pub ap: Vec<f64>,
    /// MFLOP waiting at each server.
    pub server: Vec<f64>,
}

impl QueueState {
    pub fn empty(topology: &NetworkTopology) -> Self {
        Self {
            ap: vec![0.0; topology.ap_count()],
            server: vec![0.0; topology.server_count()],
        }
    }

    /// Advances every queue by one slot. Failed servers keep their backlog.
    pub fn step(
        &mut self,
        topology: &NetworkTopology,
        ap_loads: &[OfferedLoad],
        server_loads: &[f64],
        failed: impl Fn(ServerId) -> bool,
        slot_secs: f64,
    ) {
        for (q, (ap, load)) in self.ap.iter_mut().zip(topology.aps().iter().zip(ap_loads)) {
            *q = queue_update(*q, load.total(), ap.transmit_capacity, slot_secs);
        }
        for (q, (s, &load)) in self.server.iter_mut().zip(topology.servers().iter().zip(server_loads)) {
            if !failed(s.id) {
                *q = queue_update(*q, load, s.compute_capacity, slot_secs);
            }
        }
    }

    pub fn ap_backlog(&self) -> f64 {
        self.ap.iter().sum()
    }

    pub fn server_backlog(&self) -> f64 {
        self.server.iter().sum()
    }

    /// Queueing delay at one AP, seconds.
    pub fn hop_delay(&self, ap: ApId, topology: &NetworkTopology) -> f64 {
        self.ap[ap.index()] / topology.aps()[ap.index()].transmit_capacity
    }

    /// Queueing delay at one server, seconds.
    pub fn server_delay(&self, server: ServerId, topology: &NetworkTopology) -> f64 {
        self.server[server.index()] / topology.servers()[server.index()].compute_capacity
    }
}

/// Delay of `ap`'s tasks served by `server`: the transmission delay at the
/// source and every hop of each route, weighted by route share, plus the
/// server's processing delay. Seconds.
pub fn end_to_end_delay(
    ap: ApId,
    server: ServerId,
    strategy: &AllocationStrategy,
    topology: &NetworkTopology,
    queues: &QueueState,
) -> Result<f64, DelayError> {
    let plan = strategy.plan(ap);
    if !plan.is_assigned_to(server) {
        return Err(DelayError::NotAssigned { ap, server });
    }
    let source = queues.hop_delay(ap, topology);
    let mut delay = processing_delay(
        queues.server[server.index()],
        topology.servers()[server.index()].compute_capacity,
    )?;
    for route in &plan.routes {
        let path: f64 = route.hops.iter().map(|&h| queues.hop_delay(h, topology)).sum();
        delay += route.share * (source + path);
    }
    Ok(delay)
}

/// Delay experienced by `ap`'s tasks under `strategy`, seconds. Cloud APs
/// pay the cloud latency.
pub fn ap_delay(
    ap: ApId,
    strategy: &AllocationStrategy,
    topology: &NetworkTopology,
    queues: &QueueState,
    cloud: &CloudModel,
) -> f64 {
    match strategy.plan(ap).server() {
        Some(server) => end_to_end_delay(ap, server, strategy, topology, queues).expect("assigned server"),
        None => cloud.delay_secs(topology.aps()[ap.index()].task_size),
    }
}

/// Sum of [`ap_delay`] over all APs, seconds.
pub fn total_delay(
    strategy: &AllocationStrategy,
    topology: &NetworkTopology,
    queues: &QueueState,
    cloud: &CloudModel,
) -> f64 {
    topology
        .ap_ids()
        .map(|ap| ap_delay(ap, strategy, topology, queues, cloud))
        .sum()
}
