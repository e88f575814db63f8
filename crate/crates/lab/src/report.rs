//! JSON reports and the config-driven experiment runner.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use aope_core::BoundReport;
use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{LabError, Result};
use crate::experiments::{
    export_bound_checks_csv, export_coverage_csv, export_csv, run_bias_experiment, run_coverage_sweep,
    run_lower_bound_experiment, LowerBoundSummary,
};
use crate::io::write_json;

/// JSON form of a bound report. The per-cell tensor is dropped unless
/// `full_cells` is set.
pub fn bound_report_json(report: &BoundReport, full_cells: bool) -> Value {
    let mut value = serde_json::to_value(report).expect("bound reports serialize");
    if !full_cells {
        if let Some(map) = value.as_object_mut() {
            map.remove("per_cell");
        }
    }
    value
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<LowerBoundSummary>,
    pub warnings: Vec<String>,
}

/// Runs the configured experiment, writing its CSV files and a
/// `<stem>_summary.json` into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Summary> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| LabError::io(&cfg.out_dir, e))?;
    let path = |suffix: &str| cfg.out_dir.join(format!("{}_{suffix}", cfg.stem()));
    let mut outputs = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut lower_bound = None;

    match cfg.experiment {
        ExperimentKind::Bias => {
            let setup = cfg.setup()?;
            let result = run_bias_experiment(&setup, &cfg.params(workers))?;
            let curves = path("curves.csv");
            export_csv(&result.curves, &curves)?;
            let bounds = path("bounds.csv");
            export_bound_checks_csv(&result.bound_checks, &bounds)?;
            outputs.insert("curves".to_string(), curves);
            outputs.insert("bounds".to_string(), bounds);
            warnings = result.warnings;
        }
        ExperimentKind::Coverage => {
            let setup = cfg.setup()?;
            let rows = run_coverage_sweep(&setup, &cfg.params(workers), cfg.bound)?;
            let table = path("coverage.csv");
            export_coverage_csv(&rows, &table)?;
            outputs.insert("coverage".to_string(), table);
        }
        ExperimentKind::LowerBound => {
            if cfg.mdp != "tree_F" {
                warnings.push(format!("lower_bound always uses the tree instances; mdp {:?} ignored", cfg.mdp));
            }
            lower_bound = Some(run_lower_bound_experiment(cfg.replications, cfg.trajectories, cfg.seed, workers)?);
        }
    }

    let summary_path = path("summary.json");
    outputs.insert("summary".to_string(), summary_path.clone());
    let summary = Summary {
        experiment: cfg.experiment,
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
        lower_bound,
        warnings,
    };
    write_json(&summary_path, &summary)?;
    Ok(summary)
}
