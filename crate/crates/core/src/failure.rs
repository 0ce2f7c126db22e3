//! Server failure and repair schedules.
//!
//! Each server alternates between up and down periods. Down periods last a
//! uniform number of slots; up periods end with a constant per-slot hazard
//! chosen so the long-run fraction of failed servers equals the target
//! ratio. Servers start in the stationary state, so the ratio holds from
//! slot zero.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::ServerId;

pub const SCHEDULE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FailureError {
    #[error("failure ratio {0} must lie in [0, 1]")]
    InvalidRatio(f64),
    #[error("repair duration range {0}..={1} is invalid")]
    InvalidRepairRange(u64, u64),
    #[error("unsupported schedule format version {0}")]
    UnsupportedVersion(u32),
    #[error("event for unknown server {0}")]
    UnknownServer(ServerId),
    #[error("{server} gets a {kind:?} at slot {slot} in the wrong state")]
    OutOfOrder {
        server: ServerId,
        slot: u64,
        kind: EventKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    // Declaration order is processing order within a slot.
    Repair,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FailureEvent {
    pub slot: u64,
    pub kind: EventKind,
    pub server: ServerId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureParams {
    /// Long-run fraction of failed servers.
    pub ratio: f64,
    /// Inclusive range of repair durations, slots.
    pub repair_slots: (u64, u64),
    pub horizon: u64,
}

impl FailureParams {
    pub fn new(ratio: f64, horizon: u64) -> Self {
        Self {
            ratio,
            repair_slots: (5, 50),
            horizon,
        }
    }

    fn mean_repair(&self) -> f64 {
        (self.repair_slots.0 + self.repair_slots.1) as f64 / 2.0
    }

    /// Per-slot failure probability of an operational server.
    pub fn hazard(&self) -> f64 {
        if self.ratio >= 1.0 {
            return 1.0;
        }
        (self.ratio / ((1.0 - self.ratio) * self.mean_repair())).min(1.0)
    }
}

/// Time-ordered failure and repair events. Within a slot, repairs come
/// before failures and servers are in id order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureSchedule {
    events: Vec<FailureEvent>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleDocument {
    format_version: u32,
    server_count: usize,
    events: Vec<FailureEvent>,
}

impl FailureSchedule {
    /// Builds a schedule from arbitrary events, checking that every server
    /// alternates fail, repair, fail, ... starting from operational.
    pub fn from_events(mut events: Vec<FailureEvent>, server_count: usize) -> Result<Self, FailureError> {
        events.sort();
        let mut down = vec![false; server_count];
        for e in &events {
            let state = down
                .get_mut(e.server.index())
                .ok_or(FailureError::UnknownServer(e.server))?;
            let expect_down = e.kind == EventKind::Repair;
            if *state != expect_down {
                return Err(FailureError::OutOfOrder {
                    server: e.server,
                    slot: e.slot,
                    kind: e.kind,
                });
            }
            *state = !*state;
        }
        Ok(Self { events })
    }

    /// `servers` fail at `slot` and never come back.
    pub fn permanent(servers: impl IntoIterator<Item = ServerId>, slot: u64) -> Self {
        let mut events: Vec<FailureEvent> = servers
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|server| FailureEvent {
                slot,
                kind: EventKind::Fail,
                server,
            })
            .collect();
        events.sort();
        Self { events }
    }

    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events scheduled in `slot`, in processing order.
    pub fn at(&self, slot: u64) -> &[FailureEvent] {
        let lo = self.events.partition_point(|e| e.slot < slot);
        let hi = self.events.partition_point(|e| e.slot <= slot);
        &self.events[lo..hi]
    }

    /// Servers down at the end of `slot`.
    pub fn failed_after(&self, slot: u64) -> BTreeSet<ServerId> {
        let mut down = BTreeSet::new();
        for e in self.events.iter().take_while(|e| e.slot <= slot) {
            match e.kind {
                EventKind::Fail => down.insert(e.server),
                EventKind::Repair => down.remove(&e.server),
            };
        }
        down
    }

    pub fn to_json(&self, server_count: usize) -> String {
        serde_json::to_string_pretty(&ScheduleDocument {
            format_version: SCHEDULE_FORMAT_VERSION,
            server_count,
            events: self.events.clone(),
        })
        .expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let doc: ScheduleDocument = serde_json::from_str(text)?;
        if doc.format_version != SCHEDULE_FORMAT_VERSION {
            return Err(FailureError::UnsupportedVersion(doc.format_version).into());
        }
        Ok(Self::from_events(doc.events, doc.server_count)?)
    }
}

/// Draws a stationary failure schedule for `server_count` servers.
pub fn generate_failures(
    seed: u64,
    server_count: usize,
    params: &FailureParams,
) -> Result<FailureSchedule, FailureError> {
    let ratio = params.ratio;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(FailureError::InvalidRatio(ratio));
    }
    let (lo, hi) = params.repair_slots;
    if lo == 0 || lo > hi {
        return Err(FailureError::InvalidRepairRange(lo, hi));
    }
    if ratio == 0.0 {
        return Ok(FailureSchedule::default());
    }
    if ratio == 1.0 {
        return Ok(FailureSchedule::permanent(
            (0..server_count as u32).map(ServerId),
            0,
        ));
    }
    let hazard = params.hazard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for i in 0..server_count as u32 {
        let server = ServerId(i);
        let mut slot = 0u64;
        if rng.random_bool(ratio) {
            // Length-biased residual of the repair period already under way.
            let full = loop {
                let d = rng.random_range(lo..=hi);
                if rng.random_range(0..hi) < d {
                    break d;
                }
            };
            let residual = rng.random_range(1..=full);
            events.push(FailureEvent {
                slot: 0,
                kind: EventKind::Fail,
                server,
            });
            slot = residual;
            if slot >= params.horizon {
                continue;
            }
            events.push(FailureEvent {
                slot,
                kind: EventKind::Repair,
                server,
            });
        }
        loop {
            // Geometric up period of at least one slot.
            let up = if hazard >= 1.0 {
                1
            } else {
                let u: f64 = rng.random();
                1 + ((1.0 - u).ln() / (1.0 - hazard).ln()).floor() as u64
            };
            slot = slot.saturating_add(up);
            if slot >= params.horizon {
                break;
            }
            events.push(FailureEvent {
                slot,
                kind: EventKind::Fail,
                server,
            });
            slot += rng.random_range(lo..=hi);
            if slot >= params.horizon {
                break;
            }
            events.push(FailureEvent {
                slot,
                kind: EventKind::Repair,
                server,
            });
        }
    }
    FailureSchedule::from_events(events, server_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_failed_fraction(s: &FailureSchedule, servers: usize, horizon: u64) -> f64 {
        let mut down = vec![false; servers];
        let mut total = 0usize;
        for slot in 0..horizon {
            for e in s.at(slot) {
                down[e.server.index()] = e.kind == EventKind::Fail;
            }
            total += down.iter().filter(|d| **d).count();
        }
        total as f64 / (servers as u64 * horizon) as f64
    }

    #[test]
    fn stationary_fraction_matches_target() {
        for ratio in [0.1, 0.4, 0.8] {
            let s = generate_failures(3, 200, &FailureParams::new(ratio, 2000)).unwrap();
            let got = mean_failed_fraction(&s, 200, 2000);
            assert!((got - ratio).abs() < 0.03, "ratio {ratio}: got {got}");
        }
    }

    #[test]
    fn fraction_holds_from_the_start() {
        let s = generate_failures(5, 2000, &FailureParams::new(0.5, 10)).unwrap();
        let got = s.failed_after(0).len() as f64 / 2000.0;
        assert!((got - 0.5).abs() < 0.05);
    }

    #[test]
    fn edge_ratios() {
        assert!(generate_failures(1, 10, &FailureParams::new(0.0, 100)).unwrap().is_empty());
        let all = generate_failures(1, 10, &FailureParams::new(1.0, 100)).unwrap();
        assert_eq!(all.events().len(), 10);
        assert_eq!(all.failed_after(99).len(), 10);
        assert_eq!(
            generate_failures(1, 10, &FailureParams::new(1.5, 100)).unwrap_err(),
            FailureError::InvalidRatio(1.5)
        );
    }

    #[test]
    fn repairs_precede_failures_within_a_slot() {
        let events = vec![
            FailureEvent { slot: 0, kind: EventKind::Fail, server: ServerId(1) },
            FailureEvent { slot: 3, kind: EventKind::Fail, server: ServerId(0) },
            FailureEvent { slot: 3, kind: EventKind::Repair, server: ServerId(1) },
        ];
        let s = FailureSchedule::from_events(events, 2).unwrap();
        let kinds: Vec<_> = s.at(3).iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Repair, EventKind::Fail]);
    }

    #[test]
    fn inconsistent_events_are_rejected() {
        let twice = vec![
            FailureEvent { slot: 0, kind: EventKind::Fail, server: ServerId(0) },
            FailureEvent { slot: 1, kind: EventKind::Fail, server: ServerId(0) },
        ];
        assert!(matches!(
            FailureSchedule::from_events(twice, 1),
            Err(FailureError::OutOfOrder { .. })
        ));
        let unknown = vec![FailureEvent { slot: 0, kind: EventKind::Fail, server: ServerId(4) }];
        assert_eq!(
            FailureSchedule::from_events(unknown, 1).unwrap_err(),
            FailureError::UnknownServer(ServerId(4))
        );
    }

    #[test]
    fn json_round_trip() {
        let s = generate_failures(8, 12, &FailureParams::new(0.3, 300)).unwrap();
        let back = FailureSchedule::from_json(&s.to_json(12)).unwrap();
        assert_eq!(back, s);
        assert_eq!(generate_failures(8, 12, &FailureParams::new(0.3, 300)).unwrap(), s);
    }
}
