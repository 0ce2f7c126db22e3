//! Slotted simulation of a network under server failures.
//!
//! Every slot: failure and repair events are applied and handed to the
//! recovery policy, arrivals are drawn, queues advance one step and every
//! AP's delay is recorded. Topology, arrivals and failures come from
//! separate seeded streams, so runs with different policies see the same
//! network, the same traffic and the same failures.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::allocation::{AllocationStrategy, Epoch};
use crate::delay_model::{ap_delay, offered_loads, server_offered_loads, Arrivals, QueueState};
use crate::failure::{generate_failures, EventKind, FailureError, FailureEvent, FailureSchedule};
use crate::fodt::RecoveryContext;
use crate::policy::{PolicyError, PolicyKind, RecoveryPolicy};
use crate::topology::{generate_topology, NetworkTopology, ServerId, TopologyError};

mod config;
mod metrics;
mod sweep;

pub use config::{FailureSpec, SimulationConfig};
pub use metrics::{Conservation, CycleCost, EventRecord, Extremes, MetricsRecord};
pub use sweep::{sweep, SweepGrid};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Failure(#[from] FailureError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl SimError {
    /// True when the error comes from bad input rather than from running.
    pub fn is_config(&self) -> bool {
        match self {
            SimError::Config(_) => true,
            SimError::Topology(e) => matches!(
                e,
                TopologyError::TooFewAccessPoints(_)
                    | TopologyError::InvalidRatio(_)
                    | TopologyError::InvalidServerCount { .. }
                    | TopologyError::InvalidRange(_)
            ),
            SimError::Failure(e) => matches!(
                e,
                FailureError::InvalidRatio(_) | FailureError::InvalidRepairRange(..)
            ),
            SimError::Policy(_) => false,
        }
    }
}

/// Independent seed for one of the run's random streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TOPOLOGY_STREAM: u64 = 1;
const ARRIVAL_STREAM: u64 = 2;
const FAILURE_STREAM: u64 = 3;

/// Per-slot Poisson task arrivals at every AP.
pub struct ArrivalStream {
    rng: ChaCha8Rng,
    draws: Vec<Option<Poisson<f64>>>,
    sizes: Vec<(f64, f64)>,
    slot_secs: f64,
}

impl ArrivalStream {
    pub fn new(topology: &NetworkTopology, seed: u64, slot_secs: f64) -> Self {
        let draws = topology
            .aps()
            .iter()
            .map(|a| {
                let mean = a.task_rate() * slot_secs;
                (mean > 0.0).then(|| Poisson::new(mean).expect("positive mean"))
            })
            .collect();
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws,
            sizes: topology.aps().iter().map(|a| (a.task_size, a.task_work)).collect(),
            slot_secs,
        }
    }

    /// Tasks admitted during the next slot.
    pub fn next_slot(&mut self) -> SlotArrivals {
        let n = self.draws.len();
        let (mut tasks, mut data, mut work) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for (draw, &(size, task_work)) in self.draws.iter().zip(&self.sizes) {
            let count = draw.as_ref().map_or(0.0, |d| d.sample(&mut self.rng));
            tasks.push(count as u64);
            data.push(count * size / self.slot_secs);
            work.push(count * task_work / self.slot_secs);
        }
        SlotArrivals {
            tasks,
            rates: Arrivals { data, work },
        }
    }
}

/// Task counts of one slot and the rates they amount to.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotArrivals {
    pub tasks: Vec<u64>,
    pub rates: Arrivals,
}

/// What happened in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub mean_delay_ms: f64,
    pub cloud_aps: usize,
    pub min_queue: f64,
    /// |admitted - served - backlog - cloud| after this slot, MFLOP.
    pub conservation_error: f64,
    pub events: Vec<EventRecord>,
}

pub struct Simulation {
    config: SimulationConfig,
    topology: NetworkTopology,
    schedule: FailureSchedule,
    strategy: AllocationStrategy,
    policy: Box<dyn RecoveryPolicy>,
    queues: QueueState,
    failed: BTreeSet<ServerId>,
    arrivals: ArrivalStream,
    slot: u64,
    delay_sum: f64,
    task_count: u64,
    cloud_sum: f64,
    failed_sum: f64,
    max_failed: usize,
    slot_delays: Vec<f64>,
    events: Vec<EventRecord>,
    extremes: Extremes,
    conservation: Conservation,
    min_queue: f64,
}

/// Schedule for `config` on a network with `servers` servers.
pub fn build_schedule(config: &SimulationConfig, servers: usize) -> Result<FailureSchedule, SimError> {
    let seed = derive_seed(config.seed, FAILURE_STREAM);
    match &config.failures {
        FailureSpec::Stationary => Ok(generate_failures(seed, servers, &config.failure_params())?),
        FailureSpec::Permanent { count, slot } => {
            if *count > servers {
                return Err(SimError::Config(format!("{count} permanent failures for {servers} servers")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked = sample(&mut rng, servers, *count).into_iter().map(|i| ServerId(i as u32));
            Ok(FailureSchedule::permanent(picked, *slot))
        }
        FailureSpec::Scripted { events } => Ok(FailureSchedule::from_events(events.clone(), servers)?),
    }
}

impl Simulation {
    pub fn new(config: SimulationConfig) -> Result<Self, SimError> {
        config.validate()?;
        let topology = generate_topology(derive_seed(config.seed, TOPOLOGY_STREAM), &config.topology_params())?;
        let schedule = build_schedule(&config, topology.server_count())?;
        Self::with_network(config, topology, schedule)
    }

    /// Runs on a given topology and schedule instead of generating them.
    pub fn with_network(
        config: SimulationConfig,
        topology: NetworkTopology,
        schedule: FailureSchedule,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let strategy = AllocationStrategy::baseline(&topology);
        let policy = config.policy.build(&topology, &strategy, &config.policy_params);
        let queues = QueueState::empty(&topology);
        let arrivals = ArrivalStream::new(&topology, derive_seed(config.seed, ARRIVAL_STREAM), config.slot_secs);
        let mut extremes = Extremes::empty();
        for a in topology.aps() {
            extremes.min_transmit_capacity = extremes.min_transmit_capacity.min(a.transmit_capacity);
            extremes.max_transmit_capacity = extremes.max_transmit_capacity.max(a.transmit_capacity);
            extremes.min_task_size = extremes.min_task_size.min(a.task_size);
            extremes.max_task_size = extremes.max_task_size.max(a.task_size);
        }
        for s in topology.servers() {
            extremes.min_compute_capacity = extremes.min_compute_capacity.min(s.compute_capacity);
            extremes.max_compute_capacity = extremes.max_compute_capacity.max(s.compute_capacity);
        }
        Ok(Self {
            config,
            topology,
            schedule,
            strategy,
            policy,
            queues,
            failed: BTreeSet::new(),
            arrivals,
            slot: 0,
            delay_sum: 0.0,
            task_count: 0,
            cloud_sum: 0.0,
            failed_sum: 0.0,
            max_failed: 0,
            slot_delays: Vec::new(),
            events: Vec::new(),
            extremes,
            conservation: Conservation::default(),
            min_queue: 0.0,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn schedule(&self) -> &FailureSchedule {
        &self.schedule
    }

    pub fn strategy(&self) -> &AllocationStrategy {
        &self.strategy
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn failed(&self) -> &BTreeSet<ServerId> {
        &self.failed
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.config.horizon
    }

    fn apply_event(&mut self, event: FailureEvent) -> Result<EventRecord, SimError> {
        match event.kind {
            EventKind::Fail => self.failed.insert(event.server),
            EventKind::Repair => self.failed.remove(&event.server),
        };
        let ctx = RecoveryContext {
            topology: &self.topology,
            queues: &self.queues,
            failed: &self.failed,
            cloud: &self.config.cloud,
        };
        let started = Instant::now();
        let outcome = match event.kind {
            EventKind::Fail => self.policy.on_failure(event.server, &mut self.strategy, &ctx)?,
            EventKind::Repair => self.policy.on_repair(event.server, &mut self.strategy, &ctx)?,
        };
        let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.strategy.epoch = match event.kind {
            EventKind::Fail => Epoch::PostFailure(event.slot),
            EventKind::Repair => Epoch::PostRepair(event.slot),
        };
        Ok(EventRecord {
            slot: event.slot,
            server: event.server,
            kind: event.kind,
            cost: outcome.cost,
            wall_ms,
        })
    }

    /// Advances one slot.
    pub fn step(&mut self) -> Result<SlotRecord, SimError> {
        let slot = self.slot;
        let events: Vec<FailureEvent> = self.schedule.at(slot).to_vec();
        let mut records = Vec::with_capacity(events.len());
        for event in events {
            records.push(self.apply_event(event)?);
        }

        let t = self.config.slot_secs;
        let SlotArrivals { tasks, rates: arrivals } = self.arrivals.next_slot();
        let ap_loads = offered_loads(&self.strategy, &arrivals.data);
        let server_loads = server_offered_loads(&self.strategy, self.topology.server_count(), &arrivals.work);
        let before: Vec<f64> = self.queues.server.clone();
        let failed = &self.failed;
        self.queues.step(&self.topology, &ap_loads, &server_loads, |s| failed.contains(&s), t);

        let cons = &mut self.conservation;
        for (i, plan) in self.strategy.plans.iter().enumerate() {
            cons.admitted += arrivals.work[i] * t;
            if plan.cloud {
                cons.cloud += arrivals.work[i] * t;
            }
        }
        for (i, s) in self.topology.servers().iter().enumerate() {
            if !self.failed.contains(&s.id) {
                cons.served += before[i] + server_loads[i] * t - self.queues.server[i];
            }
        }
        cons.backlog = self.queues.server_backlog();
        let error = (cons.admitted - cons.served - cons.backlog - cons.cloud).abs();
        cons.max_error = cons.max_error.max(error);

        let m = self.topology.ap_count();
        let cloud = &self.config.cloud;
        let delays: Vec<f64> = self
            .topology
            .ap_ids()
            .map(|ap| ap_delay(ap, &self.strategy, &self.topology, &self.queues, cloud))
            .collect();
        let count: u64 = tasks.iter().sum();
        let weighted: f64 = delays.iter().zip(&tasks).map(|(d, &n)| d * n as f64).sum();
        let mean_delay_ms = if count > 0 {
            weighted / count as f64 * 1000.0
        } else {
            delays.iter().sum::<f64>() / m as f64 * 1000.0
        };
        let cloud_aps = self.strategy.cloud_aps();
        let min_queue = self
            .queues
            .ap
            .iter()
            .chain(&self.queues.server)
            .fold(f64::INFINITY, |a, &b| a.min(b));
        self.min_queue = self.min_queue.min(min_queue);

        if slot >= self.config.warmup {
            self.delay_sum += weighted * 1000.0;
            self.task_count += count;
            self.cloud_sum += cloud_aps as f64 / m as f64;
            self.failed_sum += self.failed.len() as f64 / self.topology.server_count() as f64;
            self.max_failed = self.max_failed.max(self.failed.len());
            self.slot_delays.push(mean_delay_ms);
            self.track_extremes();
        }
        self.events.extend(records.iter().cloned());
        self.slot += 1;
        Ok(SlotRecord {
            slot,
            mean_delay_ms,
            cloud_aps,
            min_queue,
            conservation_error: error,
            events: records,
        })
    }

    fn track_extremes(&mut self) {
        let x = &mut self.extremes;
        for &q in &self.queues.ap {
            x.max_ap_queue = x.max_ap_queue.max(q);
            x.min_ap_queue = x.min_ap_queue.min(q);
        }
        for (i, &q) in self.queues.server.iter().enumerate() {
            if !self.failed.contains(&ServerId(i as u32)) {
                x.max_server_queue = x.max_server_queue.max(q);
                x.min_server_queue = x.min_server_queue.min(q);
            }
        }
        for plan in &self.strategy.plans {
            for r in &plan.routes {
                x.max_route_aps = x.max_route_aps.max(r.hops.len() as u32 + 1);
            }
        }
    }

    /// Runs the remaining slots and returns the run's metrics.
    pub fn finish(mut self) -> Result<MetricsRecord, SimError> {
        while !self.is_done() {
            self.step()?;
        }
        let measured = (self.config.horizon - self.config.warmup) as f64;
        Ok(MetricsRecord {
            policy: self.config.policy,
            seed: self.config.seed,
            aps: self.topology.ap_count(),
            servers: self.topology.server_count(),
            failure_ratio: self.config.failure_ratio,
            deployment_ratio: self.config.deployment_ratio(),
            mean_delay_ms: if self.task_count > 0 {
                self.delay_sum / self.task_count as f64
            } else {
                self.slot_delays.iter().sum::<f64>() / measured
            },
            slot_delay_ms: self.slot_delays,
            cloud_fraction: self.cloud_sum / measured,
            failed_fraction: self.failed_sum / measured,
            max_failed: self.max_failed,
            events: self.events,
            extremes: self.extremes,
            conservation: self.conservation,
            min_queue: self.min_queue,
            cost_unit_us: self.config.cost_unit_us,
        })
    }
}

/// Runs one simulation to completion.
pub fn run(config: &SimulationConfig) -> Result<MetricsRecord, SimError> {
    Simulation::new(config.clone())?.finish()
}

/// Cost of failing `server` once the queues have warmed up and repairing
/// it one slot later.
pub fn measure_convergence(config: &SimulationConfig, server: ServerId) -> Result<CycleCost, SimError> {
    let fail = config.warmup;
    let mut config = config.clone();
    config.failures = FailureSpec::Scripted {
        events: vec![
            FailureEvent {
                slot: fail,
                kind: EventKind::Fail,
                server,
            },
            FailureEvent {
                slot: fail + 1,
                kind: EventKind::Repair,
                server,
            },
        ],
    };
    config.horizon = fail + 2;
    let record = run(&config)?;
    record
        .cycles()
        .into_iter()
        .next()
        .ok_or_else(|| SimError::Config(format!("{server} produced no failure cycle")))
}

/// Convenience for comparing policies on identical inputs.
pub fn run_policies(config: &SimulationConfig, policies: &[PolicyKind]) -> Result<Vec<MetricsRecord>, SimError> {
    policies
        .iter()
        .map(|&p| {
            let mut c = config.clone();
            c.policy = p;
            run(&c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Deployment;

    fn small(policy: PolicyKind, ratio: f64) -> SimulationConfig {
        SimulationConfig {
            seed: 7,
            aps: 40,
            deployment: Deployment::Ratio(0.25),
            failure_ratio: ratio,
            horizon: 300,
            policy,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn same_config_same_metrics() {
        let a = run(&small(PolicyKind::Fodt, 0.3)).unwrap();
        let b = run(&small(PolicyKind::Fodt, 0.3)).unwrap();
        assert_eq!(a.slot_delay_ms, b.slot_delay_ms);
        assert_eq!(a.convergence_count(), b.convergence_count());
    }

    #[test]
    fn no_failures_means_no_recovery() {
        let r = run(&small(PolicyKind::Fodt, 0.0)).unwrap();
        assert!(r.events.is_empty());
        assert_eq!(r.convergence_count(), 0);
        assert_eq!(r.cloud_fraction, 0.0);
        assert!(r.mean_delay_ms > 0.0);
    }

    #[test]
    fn work_is_conserved_and_queues_stay_nonnegative() {
        for policy in PolicyKind::ALL {
            let r = run(&small(policy, 0.5)).unwrap();
            assert!(r.min_queue >= 0.0);
            assert!(r.conservation.max_error <= 1e-6 * r.conservation.admitted.max(1.0), "{policy}");
        }
    }

    #[test]
    fn policies_share_failures_and_traffic() {
        let runs = run_policies(&small(PolicyKind::Fodt, 0.4), &PolicyKind::ALL).unwrap();
        let slots: Vec<Vec<(u64, ServerId)>> = runs
            .iter()
            .map(|r| r.events.iter().map(|e| (e.slot, e.server)).collect())
            .collect();
        assert!(slots.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn scripted_cycle_returns_to_baseline_delay() {
        let mut config = small(PolicyKind::Fodt, 0.0);
        let base = run(&config).unwrap();
        config.failures = FailureSpec::Scripted {
            events: vec![
                FailureEvent { slot: 100, kind: EventKind::Fail, server: ServerId(0) },
                FailureEvent { slot: 130, kind: EventKind::Repair, server: ServerId(0) },
            ],
        };
        let cycled = run(&config).unwrap();
        // Identical traffic; once queues drain the traces coincide again.
        let tail = |r: &MetricsRecord| r.slot_delay_ms[r.slot_delay_ms.len() - 20..].to_vec();
        assert_eq!(tail(&base), tail(&cycled));
        assert_eq!(cycled.cycles().len(), 1);
    }

    #[test]
    fn measure_convergence_counts_both_phases() {
        let config = small(PolicyKind::CloudAssistant, 0.0);
        let sim = Simulation::new(config.clone()).unwrap();
        let size = sim.topology().coverage(ServerId(2)).unwrap().members.len() as u64;
        let cycle = measure_convergence(&config, ServerId(2)).unwrap();
        assert_eq!(cycle.count, 2 * size);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let mut c = small(PolicyKind::Fodt, 0.2);
        c.warmup = c.horizon;
        assert!(run(&c).unwrap_err().is_config());
        let mut c = small(PolicyKind::Fodt, 0.2);
        c.deployment = Deployment::Ratio(1.2);
        assert!(run(&c).unwrap_err().is_config());
        let mut c = small(PolicyKind::Fodt, 0.2);
        c.failures = FailureSpec::Permanent { count: 99, slot: 0 };
        assert!(run(&c).unwrap_err().is_config());
    }
}
