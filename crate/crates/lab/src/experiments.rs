//! Monte-Carlo experiments: the adaptive-vs-shadow bias study, the
//! lower-bound demonstration on the tree instances and bound-coverage
//! sweeps.
//!
//! Replication `r` draws all of its randomness from `derive_seed(seed, r)`
//! and results are reduced in index order, so outputs do not depend on the
//! number of worker threads.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use aope_core::bounds::{estimate_expected_exploration, pointwise_bound_t3, uniform_bound_t1};
use aope_core::loggers::{collect, collect_shadow, make_lower_bound_instances, took_left_branch};
use aope_core::mdp::exact_evaluate;
use aope_core::rng::derive_seed;
use aope_core::tmis::{build_empirical_model, tmis_value};
use aope_core::{BoundKind, Counts, Dataset, Policy, TabularMdp};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunParams, Setup};
use crate::error::{LabError, Result};
use crate::io::{dataset_bytes, NamedPolicy};

/// z-value of a two-sided 95% Gaussian interval.
pub const Z95: f64 = 1.96;

pub const CURVE_HEADER: [&str; 9] = ["policy", "arm", "n", "mean", "std", "ci_low", "ci_high", "M", "seed"];
pub const COVERAGE_HEADER: [&str; 9] =
    ["bound", "policy", "n", "coverage", "mean_ratio", "ratio_ge_one", "d_bar_m", "M", "seed"];
pub const BOUND_CHECK_HEADER: [&str; 6] = ["policy", "n", "t1_bound_mean", "scaled_t1_bound", "M", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Adaptive,
    Shadow,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Adaptive => "adaptive",
            Arm::Shadow => "shadow",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(Arm::Adaptive),
            "shadow" => Ok(Arm::Shadow),
            _ => Err(format!("unknown arm {s:?}")),
        }
    }
}

/// Mean of `sqrt(n) (v_hat - v)` over replications at one prefix size.
///
/// `std` is `None` with a single replication; the interval then collapses
/// to `[mean, mean]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub policy: String,
    pub arm: Arm,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replications: usize,
    pub seed: u64,
}

impl CurvePoint {
    pub fn from_samples(policy: &str, arm: Arm, n: usize, samples: &[f64], seed: u64) -> Self {
        let (mean, std) = mean_std(samples);
        let half = std.map_or(0.0, |s| Z95 * s / (samples.len() as f64).sqrt());
        CurvePoint {
            policy: policy.to_string(),
            arm,
            n,
            mean,
            std,
            ci_low: mean - half,
            ci_high: mean + half,
            replications: samples.len(),
            seed,
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Mean uniform-bound value at the realized adaptive counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckPoint {
    pub policy: String,
    pub n: usize,
    pub t1_bound_mean: f64,
    pub replications: usize,
    pub seed: u64,
}

impl BoundCheckPoint {
    /// The bound on the `sqrt(n)`-scaled scale of [`CurvePoint::mean`].
    pub fn scaled(&self) -> f64 {
        (self.n as f64).sqrt() * self.t1_bound_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasResult {
    pub curves: Vec<CurvePoint>,
    pub bound_checks: Vec<BoundCheckPoint>,
    pub warnings: Vec<String>,
}

pub fn true_value(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let t = exact_evaluate(mdp, pi)?;
    Ok(mdp.initial().iter().enumerate().map(|(s, p)| p * t.v(0, s)).sum())
}

/// TMIS estimates of every target from one set of counts.
pub fn estimate_all(counts: &Counts, mdp: &TabularMdp, known_r_d1: bool, targets: &[NamedPolicy]) -> Result<Vec<f64>> {
    let model = build_empirical_model(counts, known_r_d1.then_some(mdp))?;
    targets.iter().map(|t| Ok(tmis_value(&model, &t.policy)?.value)).collect()
}

/// Runs `f(0..m)` on a pool of `workers` threads (0 = all cores) and returns
/// the results in index order.
pub fn run_replications<T, F>(workers: usize, m: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..m as u64).into_par_iter().map(&f).collect())
}

/// Calls `visit(n, counts)` at every prefix size in the sorted `grid`,
/// updating counts one trajectory at a time.
fn walk_prefixes(data: &Dataset, grid: &[usize], mut visit: impl FnMut(usize, &Counts) -> Result<()>) -> Result<()> {
    let mut counts = Counts::new(data.shape());
    let mut next = grid.iter().peekable();
    for t in data.trajectories() {
        counts.add(t);
        while next.peek().is_some_and(|&&n| n == counts.n()) {
            visit(counts.n(), &counts)?;
            next.next();
        }
    }
    Ok(())
}

fn check_grid(params: &RunParams) -> Result<()> {
    if params.replications == 0 || params.grid.is_empty() {
        return Err(LabError::Config("need at least one replication and one prefix size".into()));
    }
    if !params.grid.windows(2).all(|w| w[0] < w[1]) || params.grid.iter().any(|&n| n == 0 || n > params.trajectories) {
        return Err(LabError::Config(format!("prefix grid must be increasing within 1..={}", params.trajectories)));
    }
    Ok(())
}

/// Adaptive data from the configured logger, an independent shadow
/// re-rollout of its recorded policies, and `sqrt(n)`-scaled TMIS errors on
/// every prefix of both.
pub fn run_bias_experiment(setup: &Setup, params: &RunParams) -> Result<BiasResult> {
    check_grid(params)?;
    let mdp = &setup.mdp;
    let targets = &setup.targets;
    let truth: Vec<f64> = targets.iter().map(|t| true_value(mdp, &t.policy)).collect::<Result<_>>()?;
    let (k, g) = (targets.len(), params.grid.len());

    // Per replication: errors laid out [target][arm][grid], bounds [target][grid].
    let reps = run_replications(params.workers, params.replications, |r| {
        let seed = derive_seed(params.seed, r);
        let adaptive = collect(mdp, &setup.logger, params.trajectories, derive_seed(seed, 0))?;
        let shadow = collect_shadow(mdp, adaptive.policy_seq(), derive_seed(seed, 1))?;
        let mut errors = vec![0.0; k * 2 * g];
        let mut bounds = vec![0.0; k * g];
        for (arm, data) in [&adaptive, &shadow].into_iter().enumerate() {
            let mut gi = 0;
            walk_prefixes(data, &params.grid, |n, counts| {
                let est = estimate_all(counts, mdp, params.known_r_d1, targets)?;
                for (j, (v_hat, v)) in est.iter().zip(&truth).enumerate() {
                    errors[(j * 2 + arm) * g + gi] = (n as f64).sqrt() * (v_hat - v);
                    if arm == 0 {
                        bounds[j * g + gi] =
                            uniform_bound_t1(mdp, &targets[j].policy, counts.visits(), n, params.delta)?.total;
                    }
                }
                gi += 1;
                Ok(())
            })?;
        }
        Ok((errors, bounds))
    })?;

    let mut curves = Vec::with_capacity(k * 2 * g);
    let mut bound_checks = Vec::with_capacity(k * g);
    for (j, target) in targets.iter().enumerate() {
        for (arm_index, arm) in [Arm::Adaptive, Arm::Shadow].into_iter().enumerate() {
            for (gi, &n) in params.grid.iter().enumerate() {
                let samples: Vec<f64> = reps.iter().map(|(e, _)| e[(j * 2 + arm_index) * g + gi]).collect();
                curves.push(CurvePoint::from_samples(&target.name, arm, n, &samples, params.seed));
            }
        }
        for (gi, &n) in params.grid.iter().enumerate() {
            let mean = reps.iter().map(|(_, b)| b[j * g + gi]).sum::<f64>() / reps.len() as f64;
            bound_checks.push(BoundCheckPoint {
                policy: target.name.clone(),
                n,
                t1_bound_mean: mean,
                replications: params.replications,
                seed: params.seed,
            });
        }
    }
    sort_curves(&mut curves);
    bound_checks.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.n.cmp(&b.n)));
    let mut warnings = Vec::new();
    if params.replications == 1 {
        warnings.push("M = 1: standard deviations are undefined and intervals are degenerate".to_string());
    }
    Ok(BiasResult { curves, bound_checks, warnings })
}

pub fn sort_curves(curves: &mut [CurvePoint]) {
    curves.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.arm.cmp(&b.arm)).then(a.n.cmp(&b.n)));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundSummary {
    pub replications: usize,
    pub trajectories: usize,
    pub seed: u64,
    /// Replications whose first trajectory visited the left child.
    pub left_branch_count: usize,
    pub p_left: f64,
    /// Left-branch replications whose M1 and M2 datasets serialize to the
    /// same bytes.
    pub identical_on_left: usize,
    pub indistinguishable_rate: Option<f64>,
    /// Frequency of `|v_hat - v| > 1/2` for the always-right target.
    pub p_fail_m1: f64,
    pub p_fail_m2: f64,
    pub threshold: f64,
}

/// The adversarial tree logger run with the same seed on both reward
/// functions, `replications` times.
pub fn run_lower_bound_experiment(
    replications: usize,
    trajectories: usize,
    seed: u64,
    workers: usize,
) -> Result<LowerBoundSummary> {
    if replications == 0 || trajectories == 0 {
        return Err(LabError::Config("lower bound needs replications >= 1 and trajectories >= 1".into()));
    }
    let inst = make_lower_bound_instances();
    let v1 = true_value(&inst.m1, &inst.target)?;
    let v2 = true_value(&inst.m2, &inst.target)?;
    let reps = run_replications(workers, replications, |r| {
        let s = derive_seed(seed, r);
        let d1 = collect(&inst.m1, &inst.logger, trajectories, s)?;
        let d2 = collect(&inst.m2, &inst.logger, trajectories, s)?;
        let left = took_left_branch(&d1);
        if left != took_left_branch(&d2) {
            return Err(LabError::Validation(format!("replication {r}: coupled runs branched differently")));
        }
        let identical = dataset_bytes(&d1) == dataset_bytes(&d2);
        let e1 = (tmis_value(&build_empirical_model(d1.counts(), None)?, &inst.target)?.value - v1).abs();
        let e2 = (tmis_value(&build_empirical_model(d2.counts(), None)?, &inst.target)?.value - v2).abs();
        Ok((left, identical, e1, e2))
    })?;
    let m = replications as f64;
    let left_branch_count = reps.iter().filter(|r| r.0).count();
    let identical_on_left = reps.iter().filter(|r| r.0 && r.1).count();
    Ok(LowerBoundSummary {
        replications,
        trajectories,
        seed,
        left_branch_count,
        p_left: left_branch_count as f64 / m,
        identical_on_left,
        indistinguishable_rate: (left_branch_count > 0).then(|| identical_on_left as f64 / left_branch_count as f64),
        p_fail_m1: reps.iter().filter(|r| r.2 > 0.5).count() as f64 / m,
        p_fail_m2: reps.iter().filter(|r| r.3 > 0.5).count() as f64 / m,
        threshold: 0.25,
    })
}

/// One row of a coverage table. For the uniform bound the row covers all
/// targets at once (`policy = "all"`) and the ratio is the smallest
/// bound/error ratio among them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub bound: BoundKind,
    pub policy: String,
    pub n: usize,
    pub coverage: f64,
    /// Mean of the finite bound/error ratios; `None` if there are none.
    pub mean_ratio: Option<f64>,
    pub ratio_ge_one: f64,
    pub d_bar_m: Option<f64>,
    pub replications: usize,
    pub seed: u64,
}

/// Replications used to estimate the default exploration level.
pub const EXPLORATION_REPLICATIONS: usize = 64;

/// Exploration level for a coverage sweep: the configured value, or half of
/// the logger's estimated expected exploration over `N` trajectories.
pub fn coverage_d_bar_m(setup: &Setup, params: &RunParams) -> Result<f64> {
    if let Some(d) = params.d_bar_m {
        return Ok(d);
    }
    let est = estimate_expected_exploration(
        &setup.mdp,
        &setup.logger,
        params.trajectories,
        EXPLORATION_REPLICATIONS,
        derive_seed(params.seed, u64::MAX),
    )?;
    if !(est > 0.0) {
        return Err(LabError::Validation("logger has zero expected exploration; set d_bar_m explicitly".into()));
    }
    Ok(0.5 * est)
}

/// Empirical frequency of `|v_hat - v| <= bound` at every prefix size.
pub fn run_coverage_sweep(setup: &Setup, params: &RunParams, kind: BoundKind) -> Result<Vec<CoverageRow>> {
    check_grid(params)?;
    let d_bar_m = match kind {
        BoundKind::UniformT1 => None,
        BoundKind::PointwiseT3 => Some(coverage_d_bar_m(setup, params)?),
        other => {
            return Err(LabError::Config(format!("coverage sweeps support uniform_T1 and pointwise_T3, not {other}")))
        }
    };
    let mdp = &setup.mdp;
    let targets = &setup.targets;
    let truth: Vec<f64> = targets.iter().map(|t| true_value(mdp, &t.policy)).collect::<Result<_>>()?;
    let rows = if kind == BoundKind::UniformT1 { 1 } else { targets.len() };
    let g = params.grid.len();

    // Per replication: (covered, ratio) laid out [row][grid].
    let reps = run_replications(params.workers, params.replications, |r| {
        let data = collect(mdp, &setup.logger, params.trajectories, derive_seed(derive_seed(params.seed, r), 0))?;
        let mut out = vec![(false, 0.0); rows * g];
        let mut gi = 0;
        walk_prefixes(&data, &params.grid, |n, counts| {
            let est = estimate_all(counts, mdp, params.known_r_d1, targets)?;
            let mut worst = f64::INFINITY;
            for (j, (v_hat, v)) in est.iter().zip(&truth).enumerate() {
                let err = (v_hat - v).abs();
                let bound = match kind {
                    BoundKind::UniformT1 => {
                        uniform_bound_t1(mdp, &targets[j].policy, counts.visits(), n, params.delta)?
                    }
                    _ => {
                        pointwise_bound_t3(mdp, &targets[j].policy, counts.visits(), n, params.delta, d_bar_m.unwrap())?
                    }
                }
                .total;
                let ratio = bound / err;
                if kind == BoundKind::UniformT1 {
                    worst = worst.min(ratio);
                } else {
                    out[j * g + gi] = (err <= bound, ratio);
                }
            }
            if kind == BoundKind::UniformT1 {
                out[gi] = (worst >= 1.0, worst);
            }
            gi += 1;
            Ok(())
        })?;
        Ok(out)
    })?;

    let m = params.replications as f64;
    let mut table = Vec::with_capacity(rows * g);
    for row in 0..rows {
        for (gi, &n) in params.grid.iter().enumerate() {
            let cells: Vec<(bool, f64)> = reps.iter().map(|x| x[row * g + gi]).collect();
            let finite: Vec<f64> = cells.iter().map(|c| c.1).filter(|x| x.is_finite()).collect();
            table.push(CoverageRow {
                bound: kind,
                policy: if kind == BoundKind::UniformT1 { "all".into() } else { targets[row].name.clone() },
                n,
                coverage: cells.iter().filter(|c| c.0).count() as f64 / m,
                mean_ratio: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                ratio_ge_one: cells.iter().filter(|c| c.1 >= 1.0).count() as f64 / m,
                d_bar_m,
                replications: params.replications,
                seed: params.seed,
            });
        }
    }
    table.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.n.cmp(&b.n)));
    Ok(table)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::format(path, format!("{other:?}")),
    }
}

fn write_rows<const C: usize>(path: &Path, header: [&str; C], rows: impl Iterator<Item = [String; C]>) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes curves sorted by policy, arm and `n`. Floats use the shortest
/// representation that parses back to the same value.
pub fn export_csv(curves: &[CurvePoint], path: &Path) -> Result<()> {
    let mut sorted = curves.to_vec();
    sort_curves(&mut sorted);
    write_rows(
        path,
        CURVE_HEADER,
        sorted.iter().map(|c| {
            [
                c.policy.clone(),
                c.arm.to_string(),
                c.n.to_string(),
                c.mean.to_string(),
                opt(c.std),
                c.ci_low.to_string(),
                c.ci_high.to_string(),
                c.replications.to_string(),
                c.seed.to_string(),
            ]
        }),
    )
}

pub fn export_coverage_csv(rows: &[CoverageRow], path: &Path) -> Result<()> {
    write_rows(
        path,
        COVERAGE_HEADER,
        rows.iter().map(|r| {
            [
                r.bound.to_string(),
                r.policy.clone(),
                r.n.to_string(),
                r.coverage.to_string(),
                opt(r.mean_ratio),
                r.ratio_ge_one.to_string(),
                opt(r.d_bar_m),
                r.replications.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

pub fn export_bound_checks_csv(rows: &[BoundCheckPoint], path: &Path) -> Result<()> {
    write_rows(
        path,
        BOUND_CHECK_HEADER,
        rows.iter().map(|r| {
            [
                r.policy.clone(),
                r.n.to_string(),
                r.t1_bound_mean.to_string(),
                r.scaled().to_string(),
                r.replications.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

/// Reads a curve CSV back. Every column of the header must be present.
pub fn parse_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut index = [0usize; 9];
    for (slot, name) in index.iter_mut().zip(CURVE_HEADER) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::format(path, format!("missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let field = |k: usize| &record[index[k]];
        let bad = |k: usize| {
            LabError::format(path, format!("row {}: bad {} value {:?}", line + 1, CURVE_HEADER[k], field(k)))
        };
        let float = |k: usize| field(k).parse::<f64>().map_err(|_| bad(k));
        out.push(CurvePoint {
            policy: field(0).to_string(),
            arm: field(1).parse().map_err(|_| bad(1))?,
            n: field(2).parse().map_err(|_| bad(2))?,
            mean: float(3)?,
            std: if field(4).is_empty() { None } else { Some(float(4)?) },
            ci_low: float(5)?,
            ci_high: float(6)?,
            replications: field(7).parse().map_err(|_| bad(7))?,
            seed: field(8).parse().map_err(|_| bad(8))?,
        });
    }
    Ok(out)
}
