//! Scenario files and command-line axis parsing.

use std::fs;
use std::path::{Path, PathBuf};

use edge_failover::sim::{SimulationConfig, SweepGrid};
use edge_failover::{Deployment, PolicyKind};
use serde::Deserialize;

use crate::CliError;

/// A batch experiment read from TOML.
///
/// ```toml
/// name = "fig3"
/// replications = 20
/// policies = ["fodt", "greedy", "cloud_assistant"]
/// threshold_ms = 40.0
///
/// [axes]
/// rho = [0.1, 0.2]
/// mu = [0.3]
///
/// [config]
/// horizon = 1000
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "all_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "one")]
    pub replications: u64,
    /// Latency threshold for the tolerance flag, ms.
    #[serde(default)]
    pub threshold_ms: Option<f64>,
    pub axes: Axes,
    /// Base configuration; the axes override its matching fields.
    #[serde(default)]
    pub config: SimulationConfig,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Sweep axes. `mu` and `servers` are alternatives; with neither the base
/// deployment is used.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    pub rho: Vec<f64>,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub servers: Vec<usize>,
    #[serde(default)]
    pub aps: Vec<usize>,
}

fn all_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

fn one() -> u64 {
    1
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(format!("scenario {:?}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return bad("name is empty");
        }
        if self.axes.rho.is_empty() {
            return bad("axes.rho is empty");
        }
        if !self.axes.mu.is_empty() && !self.axes.servers.is_empty() {
            return bad("set at most one of axes.mu and axes.servers");
        }
        if self.policies.is_empty() {
            return bad("policies is empty");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if let Some(t) = self.threshold_ms {
            if !(t > 0.0 && t.is_finite()) {
                return bad("threshold_ms must be positive");
            }
        }
        for config in self.grid().configs() {
            config.validate().map_err(|e| CliError::Config(format!("scenario {:?}: {e}", self.name)))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> SweepGrid {
        let deployments = if !self.axes.mu.is_empty() {
            self.axes.mu.iter().map(|&mu| Deployment::Ratio(mu)).collect()
        } else if !self.axes.servers.is_empty() {
            self.axes.servers.iter().map(|&l| Deployment::Fixed(l)).collect()
        } else {
            vec![self.config.deployment]
        };
        SweepGrid {
            base: self.config.clone(),
            failure_ratios: self.axes.rho.clone(),
            deployments,
            ap_counts: self.axes.aps.clone(),
            policies: self.policies.clone(),
            replications: self.replications,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

/// Parses `start:stop:step` (inclusive), a comma list or a single value.
pub fn parse_axis(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("{s:?} is not a number"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
                return Err(format!("{text:?} is not an increasing range with a positive step"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // Round away the accumulated float error so 0.1:0.8:0.1 ends at 0.8.
            Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(format!("{text:?} should be start:stop:step or a comma list")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
replications = 2
policies = ["fodt", "greedy"]

[axes]
rho = [0.1, 0.3]
mu = [0.25]

[config]
aps = 30
horizon = 60
"#;

    #[test]
    fn parses_and_expands() {
        let s = Scenario::parse(MINIMAL).unwrap();
        let configs = s.grid().configs();
        assert_eq!(configs.len(), 2 * 2 * 2);
        assert_eq!(configs[0].deployment, Deployment::Ratio(0.25));
        assert_eq!(configs[0].aps, 30);
        assert_eq!(s.out_dir(), Path::new("out/tiny"));
    }

    #[test]
    fn empty_axes_are_rejected() {
        let text = MINIMAL.replace("rho = [0.1, 0.3]", "rho = []");
        assert!(matches!(Scenario::parse(&text), Err(CliError::Config(m)) if m.contains("axes.rho")));
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let text = MINIMAL.replace("replications = 2", "replications = ");
        let Err(CliError::Config(msg)) = Scenario::parse(&text) else { panic!("accepted") };
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn bad_values_are_config_errors() {
        let text = MINIMAL.replace("rho = [0.1, 0.3]", "rho = [1.5]");
        assert!(matches!(Scenario::parse(&text), Err(CliError::Config(_))));
        let text = MINIMAL.replace("\"greedy\"", "\"nope\"");
        assert!(matches!(Scenario::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn axis_forms() {
        assert_eq!(parse_axis("0.1:0.8:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        assert_eq!(parse_axis("0.3").unwrap(), vec![0.3]);
        assert_eq!(parse_axis("0.1, 0.5").unwrap(), vec![0.1, 0.5]);
        assert!(parse_axis("0.5:0.1:0.1").is_err());
        assert!(parse_axis("0.1:0.2").is_err());
        assert!(parse_axis("x").is_err());
    }

    #[test]
    fn bundled_packs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let s = Scenario::load(&path).unwrap();
            assert_eq!(s.grid().configs().len(), s.grid().len());
            names.push(s.name);
        }
        names.sort();
        assert_eq!(names, ["fig3", "fig4", "fig5", "fig6", "fig7"]);
        let fig3 = Scenario::load(&dir.join("fig3.toml")).unwrap();
        assert_eq!(fig3.grid().len(), 8 * 4 * 20);
        let fig7 = Scenario::load(&dir.join("fig7.toml")).unwrap();
        assert!(fig7.grid().configs().iter().all(|c| c.deployment == Deployment::Fixed(40)));
    }
}
