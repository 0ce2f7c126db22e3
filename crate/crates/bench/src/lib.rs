//! Shared fixtures for the benchmarks.

use std::collections::BTreeSet;

use edge_failover::sim::{Simulation, SimulationConfig};
use edge_failover::{AllocationStrategy, Deployment, NetworkTopology, QueueState, ServerId};

/// A network after `warmup` failure-free slots, ready for a recovery call.
pub struct WarmNetwork {
    pub config: SimulationConfig,
    pub topology: NetworkTopology,
    pub baseline: AllocationStrategy,
    pub queues: QueueState,
}

impl WarmNetwork {
    pub fn new(aps: usize, servers: usize, seed: u64) -> Self {
        let config = SimulationConfig {
            seed,
            aps,
            deployment: Deployment::Fixed(servers),
            depth_limit: 8,
            horizon: 60,
            warmup: 20,
            ..SimulationConfig::default()
        };
        let mut sim = Simulation::new(config.clone()).expect("valid fixture");
        for _ in 0..config.warmup {
            sim.step().expect("fixture step");
        }
        Self {
            topology: sim.topology().clone(),
            baseline: AllocationStrategy::baseline(sim.topology()),
            queues: sim.queues().clone(),
            config,
        }
    }

    /// The server with the largest coverage, the costliest single failure.
    pub fn busiest_server(&self) -> ServerId {
        (0..self.topology.server_count())
            .map(|i| ServerId(i as u32))
            .max_by_key(|&s| (self.baseline.assigned_to(s).len(), std::cmp::Reverse(s)))
            .expect("at least one server")
    }

    pub fn failed(&self, server: ServerId) -> BTreeSet<ServerId> {
        BTreeSet::from([server])
    }
}
