use serde::{Deserialize, Serialize};

use crate::failure::EventKind;
use crate::fodt::RecoveryCost;
use crate::policy::PolicyKind;
use crate::topology::ServerId;

/// One failure or repair handled during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub slot: u64,
    pub server: ServerId,
    pub kind: EventKind,
    pub cost: RecoveryCost,
    /// Measured time spent in the policy hook, ms.
    pub wall_ms: f64,
}

/// Cost of one failure together with the repair of the same server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleCost {
    pub server: ServerId,
    pub fail_slot: u64,
    pub count: u64,
    pub wall_ms: f64,
}

/// Smallest and largest values seen over the measured slots, as inputs to
/// the robustness bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub max_ap_queue: f64,
    pub max_server_queue: f64,
    pub min_ap_queue: f64,
    pub min_server_queue: f64,
    pub min_transmit_capacity: f64,
    pub max_transmit_capacity: f64,
    pub min_compute_capacity: f64,
    pub max_compute_capacity: f64,
    pub min_task_size: f64,
    pub max_task_size: f64,
    /// Most AP queues any edge-served route passes through.
    pub max_route_aps: u32,
}

impl Extremes {
    pub(crate) fn empty() -> Self {
        Self {
            max_ap_queue: 0.0,
            max_server_queue: 0.0,
            min_ap_queue: f64::INFINITY,
            min_server_queue: f64::INFINITY,
            min_transmit_capacity: f64::INFINITY,
            max_transmit_capacity: 0.0,
            min_compute_capacity: f64::INFINITY,
            max_compute_capacity: 0.0,
            min_task_size: f64::INFINITY,
            max_task_size: 0.0,
            max_route_aps: 0,
        }
    }
}

/// Work balance over a run, MFLOP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub admitted: f64,
    pub served: f64,
    pub backlog: f64,
    pub cloud: f64,
    /// Largest per-slot |admitted - served - backlog - cloud|.
    pub max_error: f64,
}

/// Per-run results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub policy: PolicyKind,
    pub seed: u64,
    pub aps: usize,
    pub servers: usize,
    pub failure_ratio: f64,
    pub deployment_ratio: f64,
    /// Mean delay seen by tasks admitted during measured slots, ms.
    pub mean_delay_ms: f64,
    /// Task-weighted mean delay of each measured slot, ms.
    pub slot_delay_ms: Vec<f64>,
    /// Mean fraction of APs served by the cloud over measured slots.
    pub cloud_fraction: f64,
    /// Mean fraction of failed servers over measured slots.
    pub failed_fraction: f64,
    /// Most servers down at once during measured slots.
    pub max_failed: usize,
    pub events: Vec<EventRecord>,
    pub extremes: Extremes,
    pub conservation: Conservation,
    /// Smallest queue value seen in any slot.
    pub min_queue: f64,
    pub cost_unit_us: f64,
}

impl MetricsRecord {
    /// Total recovery cost over all events.
    pub fn convergence_count(&self) -> u64 {
        self.events.iter().map(|e| e.cost.total()).sum()
    }

    /// Recovery cost converted to time at the configured cost unit, ms.
    pub fn convergence_ms(&self) -> f64 {
        self.convergence_count() as f64 * self.cost_unit_us / 1000.0
    }

    pub fn wall_ms(&self) -> f64 {
        self.events.iter().map(|e| e.wall_ms).sum()
    }

    /// Pairs every failure with the next repair of the same server.
    /// Failures never repaired within the run are left out.
    pub fn cycles(&self) -> Vec<CycleCost> {
        let mut open: std::collections::BTreeMap<ServerId, (u64, u64, f64)> = Default::default();
        let mut out = Vec::new();
        for e in &self.events {
            match e.kind {
                EventKind::Fail => {
                    open.insert(e.server, (e.slot, e.cost.total(), e.wall_ms));
                }
                EventKind::Repair => {
                    if let Some((slot, count, wall)) = open.remove(&e.server) {
                        out.push(CycleCost {
                            server: e.server,
                            fail_slot: slot,
                            count: count + e.cost.total(),
                            wall_ms: wall + e.wall_ms,
                        });
                    }
                }
            }
        }
        out.sort_by_key(|c| (c.fail_slot, c.server));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(slot: u64, server: u32, kind: EventKind, total: u64) -> EventRecord {
        EventRecord {
            slot,
            server: ServerId(server),
            kind,
            cost: RecoveryCost {
                evaluations: total - 1,
                entries: 1,
            },
            wall_ms: 0.5,
        }
    }

    #[test]
    fn cycles_pair_fail_with_repair() {
        let record = MetricsRecord {
            policy: PolicyKind::Fodt,
            seed: 0,
            aps: 4,
            servers: 2,
            failure_ratio: 0.5,
            deployment_ratio: 0.5,
            mean_delay_ms: 0.0,
            slot_delay_ms: vec![],
            cloud_fraction: 0.0,
            failed_fraction: 0.0,
            max_failed: 1,
            events: vec![
                event(1, 0, EventKind::Fail, 5),
                event(2, 1, EventKind::Fail, 7),
                event(4, 0, EventKind::Repair, 3),
            ],
            extremes: Extremes::empty(),
            conservation: Conservation::default(),
            min_queue: 0.0,
            cost_unit_us: 2.0,
        };
        let cycles = record.cycles();
        assert_eq!(cycles.len(), 1);
        assert_eq!(cycles[0].count, 8);
        assert_eq!(cycles[0].wall_ms, 1.0);
        assert_eq!(record.convergence_count(), 15);
        assert!((record.convergence_ms() - 0.03).abs() < 1e-12);
    }
}
