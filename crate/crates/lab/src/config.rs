//! Experiment configuration: a single JSON file, optionally patched with
//! dotted-key overrides.

use std::path::{Path, PathBuf};

use aope_core::{BoundKind, LoggerSpec, TabularMdp};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::io::{resolve_mdp, resolve_policies, resolve_policy, NamedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Bias,
    Coverage,
    LowerBound,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Bias => "bias",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::LowerBound => "lower_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoggerConfig {
    Fixed {
        policy: String,
    },
    Multi {
        policies: Vec<String>,
    },
    Ucbvi {
        #[serde(default = "default_bonus_scale")]
        c: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    AdversarialTree,
}

fn default_bonus_scale() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

fn default_replications() -> usize {
    500
}

fn default_trajectories() -> usize {
    200
}

fn default_targets() -> Vec<String> {
    vec!["optimal".into(), "anti_optimal".into()]
}

fn default_logger() -> LoggerConfig {
    LoggerConfig::Ucbvi { c: default_bonus_scale(), delta: default_delta() }
}

fn default_mdp() -> String {
    "toy2x2".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_bound() -> BoundKind {
    BoundKind::PointwiseT3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// `toy2x2`, `tree_F` or a path to an MDP JSON file.
    #[serde(default = "default_mdp")]
    pub mdp: String,
    /// `M1` or `M2`, for `tree_F` only.
    #[serde(default)]
    pub rewards: Option<String>,
    #[serde(default = "default_logger")]
    pub logger: LoggerConfig,
    /// M.
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// N.
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    /// Prefix sizes to evaluate; 20 log-spaced values in `[10, N]` if absent.
    #[serde(default)]
    pub prefix_grid: Option<Vec<usize>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Use the true rewards and initial distribution in the estimator.
    #[serde(default)]
    pub known_r_d1: bool,
    /// Bound checked by a coverage sweep.
    #[serde(default = "default_bound")]
    pub bound: BoundKind,
    /// Exploration level for the coverage sweep; half the logger's expected
    /// exploration if absent.
    #[serde(default)]
    pub d_bar_m: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// File stem of the outputs; the experiment kind if absent.
    #[serde(default)]
    pub name: Option<String>,
}

/// Everything a run needs besides its numeric parameters.
#[derive(Debug, Clone)]
pub struct Setup {
    pub mdp: TabularMdp,
    pub logger: LoggerSpec,
    pub targets: Vec<NamedPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub replications: usize,
    pub trajectories: usize,
    pub grid: Vec<usize>,
    pub delta: f64,
    pub seed: u64,
    pub known_r_d1: bool,
    pub d_bar_m: Option<f64>,
    pub workers: usize,
}

/// `count` log-spaced integers in `[lo, hi]`, deduplicated. Collapses to
/// `[hi]` when `hi <= lo`.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if hi <= lo || count <= 1 {
        return vec![hi];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut grid: Vec<usize> = (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp().round() as usize)
        .map(|x| x.clamp(lo, hi))
        .collect();
    grid.dedup();
    grid
}

impl ExperimentConfig {
    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_value(value, overrides)
    }

    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        if !overrides.is_empty() {
            // Materialize defaults first so that overrides can reach into them.
            let base: ExperimentConfig = serde_json::from_value(value).map_err(|e| LabError::Config(e.to_string()))?;
            value = serde_json::to_value(base).expect("configs serialize");
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(LabError::Config(m));
        if self.replications == 0 {
            return fail("replications must be >= 1".into());
        }
        if self.trajectories == 0 {
            return fail("trajectories must be >= 1".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must be in (0,1), got {}", self.delta));
        }
        if let Some(grid) = &self.prefix_grid {
            if grid.is_empty() {
                return fail("prefix_grid must not be empty".into());
            }
            if let Some(&bad) = grid.iter().find(|&&n| n == 0 || n > self.trajectories) {
                return fail(format!("prefix_grid value {bad} outside 1..={}", self.trajectories));
            }
        }
        if let Some(d) = self.d_bar_m {
            if !(d > 0.0 && d <= 1.0) {
                return fail(format!("d_bar_m must be in (0,1], got {d}"));
            }
        }
        if self.experiment == ExperimentKind::Coverage
            && !matches!(self.bound, BoundKind::UniformT1 | BoundKind::PointwiseT3)
        {
            return fail(format!("coverage sweeps support uniform_T1 and pointwise_T3, not {}", self.bound));
        }
        if self.targets.is_empty() && self.experiment != ExperimentKind::LowerBound {
            return fail("at least one target policy is required".into());
        }
        Ok(())
    }

    /// Sorted, deduplicated prefix sizes.
    pub fn grid(&self) -> Vec<usize> {
        match &self.prefix_grid {
            Some(g) => {
                let mut g = g.clone();
                g.sort_unstable();
                g.dedup();
                g
            }
            None => log_grid(10.min(self.trajectories), self.trajectories, 20),
        }
    }

    pub fn stem(&self) -> &str {
        self.name.as_deref().unwrap_or(self.experiment.as_str())
    }

    pub fn params(&self, workers: usize) -> RunParams {
        RunParams {
            replications: self.replications,
            trajectories: self.trajectories,
            grid: self.grid(),
            delta: self.delta,
            seed: self.seed,
            known_r_d1: self.known_r_d1,
            d_bar_m: self.d_bar_m,
            workers,
        }
    }

    /// Loads the MDP and resolves every policy name against it.
    pub fn setup(&self) -> Result<Setup> {
        let mdp = resolve_mdp(&self.mdp, self.rewards.as_deref())?;
        let policy = |name: &str| resolve_policy(name, &mdp);
        let logger = match &self.logger {
            LoggerConfig::Fixed { policy: name } => LoggerSpec::Fixed(policy(name)?),
            LoggerConfig::Multi { policies } => {
                LoggerSpec::Multi(policies.iter().map(|n| policy(n)).collect::<Result<_>>()?)
            }
            LoggerConfig::Ucbvi { c, delta } => LoggerSpec::UcbVi { bonus_scale: *c, delta: *delta },
            LoggerConfig::AdversarialTree => LoggerSpec::AdversarialTree,
        };
        logger.validate(mdp.shape()).map_err(|e| LabError::Config(format!("logger: {e}")))?;
        let mut targets = Vec::new();
        for name in &self.targets {
            targets.extend(resolve_policies(name, &mdp)?);
        }
        Ok(Setup { mdp, logger, targets })
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and kept
/// as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(LabError::Config(format!("empty key segment in {key:?}")));
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| LabError::Config(format!("cannot set {key:?}: {part:?} is inside a non-object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_value(json!({"experiment": "bias"}), &[]).unwrap();
        assert_eq!(cfg.replications, 500);
        assert_eq!(cfg.trajectories, 200);
        assert_eq!(cfg.logger, LoggerConfig::Ucbvi { c: 1.0, delta: 0.1 });
        let grid = cfg.grid();
        assert_eq!(grid.first(), Some(&10));
        assert_eq!(grid.last(), Some(&200));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(grid.len() <= 20);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = ExperimentConfig::from_value(
            json!({"experiment": "bias"}),
            &["logger.c=2.5".into(), "replications=3".into(), "mdp=tree_F".into()],
        )
        .unwrap();
        assert_eq!(cfg.logger, LoggerConfig::Ucbvi { c: 2.5, delta: 0.1 });
        assert_eq!(cfg.replications, 3);
        assert_eq!(cfg.mdp, "tree_F");
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for (v, o) in [
            (json!({"experiment": "bias", "replications": 0}), vec![]),
            (json!({"experiment": "bias", "trajectories": 5, "prefix_grid": [3, 6]}), vec![]),
            (json!({"experiment": "bias", "bogus": 1}), vec![]),
            (json!({"experiment": "bias"}), vec!["noequals".to_string()]),
            (json!({"experiment": "coverage", "bound": "nope_mse_T6"}), vec![]),
            (json!({"experiment": "bias", "delta": 1.5}), vec![]),
        ] {
            let err = ExperimentConfig::from_value(v, &o).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{err}");
        }
    }

    #[test]
    fn small_grids() {
        assert_eq!(log_grid(10, 10, 20), vec![10]);
        assert_eq!(log_grid(5, 5, 20), vec![5]);
        assert_eq!(log_grid(10, 1000, 3), vec![10, 100, 1000]);
    }
}
