//! Command-line interface.

use std::path::{Path, PathBuf};

use aope_core::bounds::{
    check_assumption_2, exploration_cells, exploration_stats, nope_mse_bound_t6, pointwise_bound_t3, uniform_bound_t1,
    worst_case_c2, worst_case_c4,
};
use aope_core::loggers::collect;
use aope_core::tmis::{build_empirical_model, tmis_value};
use aope_core::{BoundKind, Dataset, LoggerSpec, TabularMdp};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::io::Write;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::experiments::{run_lower_bound_experiment, true_value};
use crate::io::{read_dataset, resolve_mdp, resolve_policy, write_dataset, write_json};
use crate::report::{bound_report_json, run_experiment};

/// `println!` that exits quietly when the reader of stdout has gone away.
macro_rules! say {
    ($($arg:tt)*) => {
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    };
}

#[derive(Debug, Parser)]
#[command(name = "aope-lab", version, about = "Adaptive offline policy evaluation experiments")]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, env = "AOPE_LAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for replications (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Print progress to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct MdpArgs {
    /// `toy2x2`, `tree_F` or an MDP JSON file.
    #[arg(long)]
    pub mdp: String,
    /// `M1` or `M2` (tree_F only).
    #[arg(long)]
    pub rewards: Option<String>,
}

impl MdpArgs {
    fn load(&self) -> Result<TabularMdp> {
        resolve_mdp(&self.mdp, self.rewards.as_deref())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an MDP, a dataset against an MDP, or an experiment config.
    Validate {
        #[arg(long)]
        mdp: Option<String>,
        #[arg(long)]
        rewards: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Exact value of a policy.
    Evaluate {
        #[command(flatten)]
        mdp: MdpArgs,
        #[arg(long)]
        policy: String,
    },
    /// Log trajectories to a JSONL dataset.
    Collect {
        #[command(flatten)]
        mdp: MdpArgs,
        /// fixed, multi, ucbvi or adversarial_tree.
        #[arg(long, default_value = "fixed")]
        logger: String,
        /// Logging policy (repeat for multi).
        #[arg(long)]
        policy: Vec<String>,
        #[arg(short = 'n', long)]
        trajectories: usize,
        /// UCB-VI bonus scale.
        #[arg(long, default_value_t = 1.0)]
        bonus_scale: f64,
        /// UCB-VI failure probability.
        #[arg(long, default_value_t = 0.1)]
        log_delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// TMIS estimate of a policy from a dataset.
    Estimate {
        #[command(flatten)]
        mdp: MdpArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        policy: String,
        /// Use the true rewards and initial distribution.
        #[arg(long)]
        known_r_d1: bool,
    },
    /// Error bound for a policy on a dataset.
    Bound {
        #[arg(long, value_parser = parse_kind)]
        kind: BoundKind,
        #[command(flatten)]
        mdp: MdpArgs,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Exploration level; derived from the dataset's loggers if absent.
        #[arg(long)]
        d_bar_m: Option<f64>,
        /// Include the per-cell tensor.
        #[arg(long)]
        full_cells: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key override, `key=value` (repeatable).
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Replaces the config's MDP source.
        #[arg(long)]
        mdp: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower-bound demonstration on the tree instances.
    LowerBound {
        #[arg(long, default_value_t = 10_000)]
        replications: usize,
        #[arg(long, default_value_t = 16)]
        trajectories: usize,
        /// Output directory for `lower_bound_summary.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<BoundKind, String> {
    BoundKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = BoundKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn load_data(path: &Path, mdp: &TabularMdp) -> Result<Dataset> {
    let data = read_dataset(path)?;
    if data.shape() != mdp.shape() {
        return Err(LabError::Validation(format!(
            "dataset {} has shape {:?}, the MDP has {:?}",
            path.display(),
            data.shape(),
            mdp.shape()
        )));
    }
    Ok(data)
}

fn print_json(value: &serde_json::Value) {
    say!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

/// Runs one invocation. Output goes to standard output; the caller maps
/// errors to exit codes.
pub fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Validate { mdp, rewards, data, config } => {
            if mdp.is_none() && config.is_none() {
                return Err(LabError::Config("validate needs --mdp or --config".into()));
            }
            if let Some(path) = config {
                let cfg = ExperimentConfig::from_path(&path, &[])?;
                cfg.setup()?;
                say!("config ok: {} experiment", cfg.experiment.as_str());
            }
            if let Some(src) = mdp {
                let m = resolve_mdp(&src, rewards.as_deref())?;
                let s = m.shape();
                say!("mdp ok: S={} A={} H={}", s.states, s.actions, s.horizon);
                if let Some(path) = data {
                    let d = load_data(&path, &m)?;
                    say!("dataset ok: {} trajectories", d.len());
                }
            } else if data.is_some() {
                return Err(LabError::Config("--data needs --mdp".into()));
            }
        }
        Command::Evaluate { mdp, policy } => {
            let m = mdp.load()?;
            let pi = resolve_policy(&policy, &m)?;
            say!("v = {:?}", true_value(&m, &pi)?);
        }
        Command::Collect { mdp, logger, policy, trajectories, bonus_scale, log_delta, out } => {
            let m = mdp.load()?;
            let spec = match logger.as_str() {
                "fixed" => match policy.as_slice() {
                    [one] => LoggerSpec::Fixed(resolve_policy(one, &m)?),
                    _ => return Err(LabError::Config("fixed logger needs exactly one --policy".into())),
                },
                "multi" => LoggerSpec::Multi(policy.iter().map(|p| resolve_policy(p, &m)).collect::<Result<_>>()?),
                "ucbvi" => LoggerSpec::UcbVi { bonus_scale, delta: log_delta },
                "adversarial_tree" => LoggerSpec::AdversarialTree,
                other => return Err(LabError::Config(format!("unknown logger {other:?}"))),
            };
            spec.validate(m.shape()).map_err(|e| LabError::Config(e.to_string()))?;
            let data = collect(&m, &spec, trajectories, seed)?;
            write_dataset(&out, &data)?;
            say!("wrote {} trajectories to {}", data.len(), out.display());
        }
        Command::Estimate { mdp, data, policy, known_r_d1 } => {
            let m = mdp.load()?;
            let pi = resolve_policy(&policy, &m)?;
            let d = load_data(&data, &m)?;
            let model = build_empirical_model(d.counts(), known_r_d1.then_some(&m))?;
            say!("v_hat = {:?}", tmis_value(&model, &pi)?.value);
            say!("v = {:?}", true_value(&m, &pi)?);
        }
        Command::Bound { kind, mdp, policy, data, delta, d_bar_m, full_cells, out } => {
            let m = mdp.load()?;
            let pi = resolve_policy(&policy, &m)?;
            let d = load_data(&data, &m)?;
            let value = bound_json(kind, &m, &pi, &d, delta, d_bar_m, full_cells)?;
            print_json(&value);
            if let Some(path) = out {
                write_json(&path, &value)?;
            }
        }
        Command::Experiment { config, overrides, mdp, out } => {
            let mut cfg = ExperimentConfig::from_path(&config, &overrides)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(src) = mdp {
                cfg.mdp = src;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            cfg.check()?;
            if cli.verbose > 0 {
                eprintln!(
                    "running {} experiment, M = {}, N = {}",
                    cfg.experiment.as_str(),
                    cfg.replications,
                    cfg.trajectories
                );
            }
            let summary = run_experiment(&cfg, cli.workers)?;
            for (name, path) in &summary.outputs {
                say!("{name}: {}", path.display());
            }
            if let Some(lb) = &summary.lower_bound {
                print_json(&serde_json::to_value(lb).expect("summary serializes"));
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::LowerBound { replications, trajectories, out } => {
            let summary = run_lower_bound_experiment(replications, trajectories, seed, cli.workers)?;
            let value = serde_json::to_value(&summary).expect("summary serializes");
            print_json(&value);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
                write_json(&dir.join("lower_bound_summary.json"), &value)?;
            }
        }
    }
    Ok(())
}

/// Exploration level from the flag, else from the dataset's own loggers.
fn exploration_level(m: &TabularMdp, pi: &aope_core::Policy, d: &Dataset, given: Option<f64>) -> Result<f64> {
    let level = match given {
        Some(x) => x,
        None => exploration_stats(m, pi, d.policy_seq(), d.counts().visits(), d.len())?.d_bar_m,
    };
    if !(level > 0.0) {
        return Err(LabError::Validation(
            "d_bar_m is 0 for this dataset's loggers; pass --d-bar-m to bound anyway".into(),
        ));
    }
    Ok(level)
}

fn bound_json(
    kind: BoundKind,
    m: &TabularMdp,
    pi: &aope_core::Policy,
    d: &Dataset,
    delta: f64,
    d_bar_m: Option<f64>,
    full_cells: bool,
) -> Result<serde_json::Value> {
    let n = d.len();
    let visits = d.counts().visits();
    Ok(match kind {
        BoundKind::UniformT1 => bound_report_json(&uniform_bound_t1(m, pi, visits, n, delta)?, full_cells),
        BoundKind::PointwiseT3 => {
            let level = exploration_level(m, pi, d, d_bar_m)?;
            let relevant: Vec<u64> =
                exploration_cells(m).iter().zip(visits).filter(|(r, _)| **r).map(|(_, &c)| c).collect();
            if !check_assumption_2(&relevant, n, level) {
                let min = relevant.iter().copied().min().unwrap_or(0);
                return Err(LabError::Validation(format!(
                    "exploration condition violated: smallest count {min} is not above n * d_bar_m = {}",
                    n as f64 * level
                )));
            }
            bound_report_json(&pointwise_bound_t3(m, pi, visits, n, delta, level)?, full_cells)
        }
        BoundKind::UniformWorstC2 | BoundKind::PointwiseWorstC4 => {
            let level = exploration_level(m, pi, d, d_bar_m)?;
            let total = if kind == BoundKind::UniformWorstC2 {
                worst_case_c2(m.shape(), n, delta, level)?
            } else {
                worst_case_c4(m.shape(), n, delta, level)?
            };
            json!({ "kind": kind, "total": total, "inputs": { "n": n, "delta": delta, "d_bar_m": level } })
        }
        BoundKind::NopeMseT6 => bound_report_json(&nope_mse_bound_t6(m, pi, d.policy_seq(), n)?, full_cells),
    })
}
