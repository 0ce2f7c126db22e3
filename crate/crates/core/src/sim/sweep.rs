use rayon::prelude::*;

use crate::policy::PolicyKind;
use crate::topology::Deployment;

use super::{run, MetricsRecord, SimError, SimulationConfig};

/// Cartesian grid of runs around a base configuration.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub base: SimulationConfig,
    pub failure_ratios: Vec<f64>,
    pub deployments: Vec<Deployment>,
    /// AP counts; empty keeps `base.aps`.
    pub ap_counts: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    /// Run `r` uses seed `base.seed + r`.
    pub replications: u64,
}

impl SweepGrid {
    /// Configurations in output order: ratio, deployment, AP count, policy,
    /// replication.
    pub fn configs(&self) -> Vec<SimulationConfig> {
        let aps = if self.ap_counts.is_empty() { vec![self.base.aps] } else { self.ap_counts.clone() };
        let mut out = Vec::new();
        for &rho in &self.failure_ratios {
            for &deployment in &self.deployments {
                for &m in &aps {
                    for &policy in &self.policies {
                        for rep in 0..self.replications {
                            let mut c = self.base.clone();
                            c.failure_ratio = rho;
                            c.deployment = deployment;
                            c.aps = m;
                            c.policy = policy;
                            c.seed = self.base.seed.wrapping_add(rep);
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        let aps = self.ap_counts.len().max(1);
        self.failure_ratios.len() * self.deployments.len() * aps * self.policies.len() * self.replications as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs every grid point on the current rayon pool. Results come back in
/// [`SweepGrid::configs`] order regardless of scheduling.
pub fn sweep(grid: &SweepGrid) -> Result<Vec<MetricsRecord>, SimError> {
    grid.configs().par_iter().map(run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(replications: u64) -> SweepGrid {
        SweepGrid {
            base: SimulationConfig {
                aps: 30,
                horizon: 120,
                ..SimulationConfig::default()
            },
            failure_ratios: vec![0.2, 0.4],
            deployments: vec![Deployment::Ratio(0.3)],
            ap_counts: Vec::new(),
            policies: vec![PolicyKind::Fodt, PolicyKind::Greedy],
            replications,
        }
    }

    #[test]
    fn zero_replications_is_empty() {
        assert!(sweep(&grid(0)).unwrap().is_empty());
    }

    #[test]
    fn ap_counts_expand_the_grid() {
        let mut g = grid(1);
        g.ap_counts = vec![20, 30];
        g.deployments = vec![Deployment::Fixed(5)];
        let configs = g.configs();
        assert_eq!(configs.len(), g.len());
        assert_eq!(configs.iter().map(|c| c.aps).collect::<Vec<_>>()[..4], [20, 20, 30, 30]);
    }

    #[test]
    fn order_is_stable_across_pool_sizes() {
        let g = grid(2);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| sweep(&g)).unwrap();
        let b = four.install(|| sweep(&g)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(g.len(), 8);
        let key = |r: &MetricsRecord| (r.failure_ratio.to_bits(), r.policy, r.seed, r.mean_delay_ms.to_bits());
        assert_eq!(a.iter().map(key).collect::<Vec<_>>(), b.iter().map(key).collect::<Vec<_>>());
        assert_eq!(a[1].seed, a[0].seed + 1);
    }
}
