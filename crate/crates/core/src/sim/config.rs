use serde::{Deserialize, Serialize};

use crate::delay_model::CloudModel;
use crate::failure::{FailureEvent, FailureParams};
use crate::policy::{PolicyKind, PolicyParams};
use crate::topology::{Deployment, ParamRanges, TopologyParams};

use super::SimError;

/// Where the failure schedule of a run comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FailureSpec {
    /// Stationary random failures at `failure_ratio`.
    Stationary,
    /// `count` servers picked at random fail at `slot` and stay down.
    Permanent { count: usize, slot: u64 },
    /// An explicit list of events.
    Scripted { events: Vec<FailureEvent> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub aps: usize,
    pub deployment: Deployment,
    /// Long-run fraction of failed servers for stationary failures.
    pub failure_ratio: f64,
    pub failures: FailureSpec,
    /// Inclusive range of repair durations, slots.
    pub repair_slots: (u64, u64),
    pub horizon: u64,
    /// Leading slots left out of averages and extremes.
    pub warmup: u64,
    pub slot_secs: f64,
    pub policy: PolicyKind,
    pub policy_params: PolicyParams,
    pub depth_limit: u32,
    pub ranges: ParamRanges,
    pub cloud: CloudModel,
    /// Modeled time per unit of recovery cost, microseconds.
    pub cost_unit_us: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            aps: 300,
            deployment: Deployment::Ratio(0.3),
            failure_ratio: 0.0,
            failures: FailureSpec::Stationary,
            repair_slots: (5, 50),
            horizon: 1000,
            warmup: 50,
            slot_secs: 0.01,
            policy: PolicyKind::Fodt,
            policy_params: PolicyParams::default(),
            depth_limit: 3,
            ranges: ParamRanges::default(),
            cloud: CloudModel::default(),
            cost_unit_us: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.warmup >= self.horizon {
            return bad(format!("warmup {} leaves no measured slots in horizon {}", self.warmup, self.horizon));
        }
        if !(self.slot_secs > 0.0 && self.slot_secs.is_finite()) {
            return bad(format!("slot_secs must be positive, got {}", self.slot_secs));
        }
        if !(0.0..=1.0).contains(&self.failure_ratio) {
            return bad(format!("failure_ratio {} must lie in [0, 1]", self.failure_ratio));
        }
        if self.repair_slots.0 == 0 || self.repair_slots.0 > self.repair_slots.1 {
            return bad(format!("repair_slots {:?} is not a nonempty range of positive slots", self.repair_slots));
        }
        if !(self.cloud.backhaul > 0.0 && self.cloud.base_latency_ms >= 0.0) {
            return bad("cloud backhaul must be positive and latency nonnegative".into());
        }
        if self.cost_unit_us < 0.0 {
            return bad("cost_unit_us must be nonnegative".into());
        }
        self.ranges.validate().map_err(|e| SimError::Config(e.to_string()))?;
        self.deployment
            .server_count(self.aps)
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn topology_params(&self) -> TopologyParams {
        TopologyParams {
            aps: self.aps,
            deployment: self.deployment,
            depth_limit: self.depth_limit,
            ranges: self.ranges.clone(),
            max_attempts: 64,
        }
    }

    pub fn failure_params(&self) -> FailureParams {
        FailureParams {
            ratio: self.failure_ratio,
            repair_slots: self.repair_slots,
            horizon: self.horizon,
        }
    }

    /// Server deployment ratio actually used, L / M.
    pub fn deployment_ratio(&self) -> f64 {
        match self.deployment {
            Deployment::Ratio(mu) => mu,
            Deployment::Fixed(l) => l as f64 / self.aps as f64,
        }
    }
}
