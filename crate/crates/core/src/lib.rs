//! Seeded slotted simulator for edge-server failure recovery in mobile edge
//! computing networks.
//!
//! Access points forward user tasks over multi-hop routes to edge servers.
//! When a server fails, a recovery policy re-routes the APs it served; when
//! it comes back, the policy restores service. [`sim::run`] drives a
//! topology, a failure schedule and a policy through time and reports
//! per-slot delays and recovery costs.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod analysis;
pub mod delay_model;
pub mod failure;
pub mod fodt;
pub mod policy;
pub mod report;
pub mod sim;
pub mod topology;

pub use topology::{
    build_coverages, edge_aps, generate_topology, neighbor_servers, AccessPoint, ApId,
    CapacityLimits, Coverage, Deployment, EdgeServer, NetworkTopology, ParamRanges, ServerId,
    TopologyError, TopologyParams,
};
pub use allocation::{AllocationStrategy, ApPlan, Epoch, Route, StrategyCache};
pub use delay_model::{Arrivals, CloudModel, QueueState};
pub use failure::{generate_failures, EventKind, FailureEvent, FailureParams, FailureSchedule};
pub use fodt::{ApRecovery, FodtMode, RecoveryContext, RecoveryCost, RecoveryPlan};
pub use policy::{PolicyKind, PolicyParams, RecoveryPolicy};
pub use sim::{run, MetricsRecord, SimError, Simulation, SimulationConfig};
