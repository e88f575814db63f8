//! Error bounds for the TMIS estimate, exploration statistics and
//! concentration radii.
//!
//! All bounds use explicit constants. Per-cell contributions follow the
//! `0/0 = 0` convention: a cell the target never visits contributes nothing,
//! while a visited-by-target cell with no data contributes `+inf`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use libm::{log, sqrt};

use crate::error::{Error, Result};
use crate::loggers::{collect, LoggerSpec};
use crate::mdp::{exact_evaluate, transition_variance_with, Policy, Shape, TabularMdp};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BoundKind {
    #[cfg_attr(feature = "serde", serde(rename = "uniform_T1"))]
    UniformT1,
    #[cfg_attr(feature = "serde", serde(rename = "uniform_worst_C2"))]
    UniformWorstC2,
    #[cfg_attr(feature = "serde", serde(rename = "pointwise_T3"))]
    PointwiseT3,
    #[cfg_attr(feature = "serde", serde(rename = "pointwise_worst_C4"))]
    PointwiseWorstC4,
    #[cfg_attr(feature = "serde", serde(rename = "nope_mse_T6"))]
    NopeMseT6,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::UniformT1,
        BoundKind::UniformWorstC2,
        BoundKind::PointwiseT3,
        BoundKind::PointwiseWorstC4,
        BoundKind::NopeMseT6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::UniformT1 => "uniform_T1",
            BoundKind::UniformWorstC2 => "uniform_worst_C2",
            BoundKind::PointwiseT3 => "pointwise_T3",
            BoundKind::PointwiseWorstC4 => "pointwise_worst_C4",
            BoundKind::NopeMseT6 => "nope_mse_T6",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BoundInputs {
    pub n: usize,
    pub delta: Option<f64>,
    pub d_bar_m: Option<f64>,
}

/// Infinite bounds are legitimate values (unseen cells), but JSON has no
/// infinity; they are written as the strings `"inf"`, `"-inf"` and `"nan"`.
#[cfg(feature = "serde")]
mod nonfinite {
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    pub fn one<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn seq<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        struct One(f64);
        impl serde::Serialize for One {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                one(&self.0, s)
            }
        }
        let mut out = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            out.serialize_element(&One(x))?;
        }
        out.end()
    }
}

/// A side condition of a bound, evaluated as `lhs > rhs`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Hypothesis {
    pub name: &'static str,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::one"))]
    pub lhs: f64,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::one"))]
    pub rhs: f64,
    pub holds: bool,
}

/// A bound decomposed over `(h, s, a)`.
///
/// `total = sum(per_cell) + residual_term` and `dominant_term = sum(per_cell)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BoundReport {
    pub kind: BoundKind,
    pub shape: Shape,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::seq"))]
    pub per_cell: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::one"))]
    pub total: f64,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::one"))]
    pub dominant_term: f64,
    #[cfg_attr(feature = "serde", serde(serialize_with = "nonfinite::one"))]
    pub residual_term: f64,
    pub inputs: BoundInputs,
    /// The residual carries an unspecified constant, reported as 1.
    pub residual_order_only: bool,
    /// Logarithmic factors hidden by the bound, if any.
    pub omitted_log_factors: Option<&'static str>,
    pub hypotheses: Vec<Hypothesis>,
}

impl BoundReport {
    fn assemble(kind: BoundKind, shape: Shape, per_cell: Vec<f64>, residual_term: f64, inputs: BoundInputs) -> Self {
        let dominant_term: f64 = per_cell.iter().sum();
        BoundReport {
            kind,
            shape,
            per_cell,
            total: dominant_term + residual_term,
            dominant_term,
            residual_term,
            inputs,
            residual_order_only: false,
            omitted_log_factors: None,
            hypotheses: Vec::new(),
        }
    }

    pub fn cell(&self, h: usize, s: usize, a: usize) -> f64 {
        self.per_cell[self.shape.cell(h, s, a)]
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("delta must be in (0,1), got {delta}")))
    }
}

fn check_visits(shape: Shape, visits: &[u64]) -> Result<()> {
    if visits.len() != shape.cells() {
        return Err(Error::ShapeMismatch { what: "visit counts", expected: shape.cells(), found: visits.len() });
    }
    Ok(())
}

/// `log(c * H * S * A * n / delta)`.
fn log_cover(c: f64, shape: Shape, n: usize, delta: f64) -> f64 {
    log(c * shape.cells() as f64 * n as f64 / delta)
}

/// `weight * sqrt(numerator / count)` under the `0/0 = 0` convention.
fn weighted_root(weight: f64, numerator: f64, count: u64) -> f64 {
    if weight == 0.0 || numerator == 0.0 {
        0.0
    } else if count == 0 {
        f64::INFINITY
    } else {
        weight * sqrt(numerator / count as f64)
    }
}

/// Uniform bound over deterministic policies:
/// `2 H sum_{h<H} sum_{s,a} d^pi_h(s,a) sqrt(S log(HSAn/delta) / n_{h,s,a})`.
pub fn uniform_bound_t1(mdp: &TabularMdp, pi: &Policy, visits: &[u64], n: usize, delta: f64) -> Result<BoundReport> {
    check_delta(delta)?;
    let shape = mdp.shape();
    check_visits(shape, visits)?;
    let tables = exact_evaluate(mdp, pi)?;
    let log_term = log_cover(1.0, shape, n, delta);
    let horizon = shape.horizon as f64;
    let mut per_cell = vec![0.0; shape.cells()];
    for (cell, slot) in per_cell.iter_mut().enumerate().take(shape.transition_cells()) {
        let d = tables.occupancies()[cell];
        *slot = weighted_root(2.0 * horizon * d, shape.states as f64 * log_term, visits[cell]);
    }
    Ok(BoundReport::assemble(
        BoundKind::UniformT1,
        shape,
        per_cell,
        0.0,
        BoundInputs { n, delta: Some(delta), d_bar_m: None },
    ))
}

/// Worst case of the uniform bound with every count at `n * d_bar_m`:
/// `2 (H-1) H sqrt(S log(HSAn/delta) / (n d_bar_m))`.
pub fn worst_case_c2(shape: Shape, n: usize, delta: f64, d_bar_m: f64) -> Result<f64> {
    check_delta(delta)?;
    check_positive(n, d_bar_m)?;
    let h = shape.horizon as f64;
    Ok(2.0 * (h - 1.0) * h * sqrt(shape.states as f64 * log_cover(1.0, shape, n, delta) / (n as f64 * d_bar_m)))
}

fn check_positive(n: usize, d_bar_m: f64) -> Result<()> {
    if n == 0 || !(d_bar_m > 0.0) {
        return Err(Error::invalid(alloc::format!("need n >= 1 and d_bar_m > 0, got n={n}, d_bar_m={d_bar_m}")));
    }
    Ok(())
}

/// Pointwise instance-dependent bound.
///
/// Dominant part, per cell with `h < H - 1`:
/// `d^pi_h(s,a) sqrt(2 Var[V^pi_{h+1}] log(4HSAn/delta) / n_{h,s,a})`.
/// Residual: `sum d^pi_h(s,a) (4H / (3 n d_bar_m)) log(4HSAn/delta)
/// + 4 H^3 S log(2HSAn/delta) / (n d_bar_m)`.
pub fn pointwise_bound_t3(
    mdp: &TabularMdp,
    pi: &Policy,
    visits: &[u64],
    n: usize,
    delta: f64,
    d_bar_m: f64,
) -> Result<BoundReport> {
    check_delta(delta)?;
    check_positive(n, d_bar_m)?;
    let shape = mdp.shape();
    check_visits(shape, visits)?;
    let tables = exact_evaluate(mdp, pi)?;
    let variance = transition_variance_with(mdp, &tables);
    let log4 = log_cover(4.0, shape, n, delta);
    let log2 = log_cover(2.0, shape, n, delta);
    let h = shape.horizon as f64;
    let nd = n as f64 * d_bar_m;

    let mut per_cell = vec![0.0; shape.cells()];
    let mut target_mass = 0.0;
    for cell in 0..shape.transition_cells() {
        let d = tables.occupancies()[cell];
        per_cell[cell] = weighted_root(d, 2.0 * variance[cell] * log4, visits[cell]);
        target_mass += d;
    }
    let residual = target_mass * (4.0 * h / (3.0 * nd)) * log4 + 4.0 * h * h * h * shape.states as f64 * log2 / nd;
    Ok(BoundReport::assemble(
        BoundKind::PointwiseT3,
        shape,
        per_cell,
        residual,
        BoundInputs { n, delta: Some(delta), d_bar_m: Some(d_bar_m) },
    ))
}

/// Worst case of the pointwise bound, using `sum_h E[Var] <= H^2` and
/// Cauchy-Schwarz over steps:
/// `sqrt(2 H^3 log(4HSAn/delta) / (n d)) + 4 H^3 S log(2HSAn/delta) / (n d)
/// + (4 H^2 / (3 n d)) log(4HSAn/delta)`.
pub fn worst_case_c4(shape: Shape, n: usize, delta: f64, d_bar_m: f64) -> Result<f64> {
    check_delta(delta)?;
    check_positive(n, d_bar_m)?;
    let h = shape.horizon as f64;
    let nd = n as f64 * d_bar_m;
    let log4 = log_cover(4.0, shape, n, delta);
    let log2 = log_cover(2.0, shape, n, delta);
    Ok(sqrt(2.0 * h * h * h * log4 / nd)
        + 4.0 * h * h * h * shape.states as f64 * log2 / nd
        + 4.0 * h * h / (3.0 * nd) * log4)
}

/// `d_m`, `d_bar_m`, `tau_s`, `tau_a` and the smallest visit count.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ExplorationStats {
    /// Smallest average-logger occupancy over cells the target visits.
    pub d_m: f64,
    /// Smallest average-logger occupancy over reachable transition cells.
    pub d_bar_m: f64,
    /// `max d^pi_h(s,a) / avg_i d^{mu^i}_h(s,a)`.
    pub tau_s: f64,
    /// `max pi_h(a|s) / avg_i mu^i_h(a|s)`.
    pub tau_a: f64,
    pub min_count: u64,
    /// Some ratio had a zero denominator under a positive numerator.
    pub infinite_ratio: bool,
}

/// `(1/n) sum_i d^{mu^i}_h(s,a)`, evaluated exactly for each recorded policy.
pub fn average_logger_occupancy(mdp: &TabularMdp, policy_seq: &[Policy]) -> Result<Vec<f64>> {
    if policy_seq.is_empty() {
        return Err(Error::invalid("empty policy sequence"));
    }
    let mut avg = vec![0.0; mdp.shape().cells()];
    let mut last: Option<(&Policy, Vec<f64>)> = None;
    for mu in policy_seq {
        let occ = match &last {
            Some((prev, occ)) if *prev == mu => occ.clone(),
            _ => exact_evaluate(mdp, mu)?.occupancies().to_vec(),
        };
        for (acc, x) in avg.iter_mut().zip(&occ) {
            *acc += x;
        }
        last = Some((mu, occ));
    }
    let n = policy_seq.len() as f64;
    for x in avg.iter_mut() {
        *x /= n;
    }
    Ok(avg)
}

fn average_action_probs(shape: Shape, policy_seq: &[Policy]) -> Vec<f64> {
    let mut avg = vec![0.0; shape.cells()];
    for mu in policy_seq {
        for (acc, p) in avg.iter_mut().zip(mu.probs()) {
            *acc += p;
        }
    }
    let n = policy_seq.len() as f64;
    avg.iter_mut().for_each(|x| *x /= n);
    avg
}

/// Cells that enter exploration requirements: reachable transition cells
/// (`h < H - 1`), or every reachable cell when `H = 1`.
///
/// Transition cells are where counts enter the error bounds; last-step
/// actions of terminal leaves carry no transition and are left out.
pub fn exploration_cells(mdp: &TabularMdp) -> Vec<bool> {
    let shape = mdp.shape();
    let upto = if shape.horizon > 1 { shape.transition_cells() } else { shape.cells() };
    let mut mask = mdp.reachable_cells();
    mask[upto..].iter_mut().for_each(|m| *m = false);
    mask
}

/// Smallest `(1/n) sum_i d^{mu^i}` over [`exploration_cells`].
pub fn min_reachable_occupancy(mdp: &TabularMdp, avg_occupancy: &[f64]) -> f64 {
    exploration_cells(mdp).iter().zip(avg_occupancy).filter(|(r, _)| **r).map(|(_, &d)| d).fold(f64::INFINITY, f64::min)
}

fn max_ratio(num: &[f64], den: &[f64]) -> (f64, bool) {
    let mut max = 0.0f64;
    let mut infinite = false;
    for (&x, &y) in num.iter().zip(den) {
        if x == 0.0 {
            continue;
        }
        if y == 0.0 {
            infinite = true;
            max = f64::INFINITY;
        } else {
            max = max.max(x / y);
        }
    }
    (max, infinite)
}

pub fn exploration_stats(
    mdp: &TabularMdp,
    pi: &Policy,
    policy_seq: &[Policy],
    visits: &[u64],
    n: usize,
) -> Result<ExplorationStats> {
    let shape = mdp.shape();
    check_visits(shape, visits)?;
    if policy_seq.len() != n {
        return Err(Error::ShapeMismatch { what: "policy sequence length", expected: n, found: policy_seq.len() });
    }
    let target = exact_evaluate(mdp, pi)?;
    let avg = average_logger_occupancy(mdp, policy_seq)?;
    let d_m = target
        .occupancies()
        .iter()
        .zip(&avg)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &mu)| mu)
        .fold(f64::INFINITY, f64::min);
    let d_bar_m = min_reachable_occupancy(mdp, &avg);
    let (tau_s, inf_s) = max_ratio(target.occupancies(), &avg);
    let (tau_a, inf_a) = max_ratio(pi.probs(), &average_action_probs(shape, policy_seq));
    Ok(ExplorationStats {
        d_m: if d_m.is_finite() { d_m } else { 0.0 },
        d_bar_m: if d_bar_m.is_finite() { d_bar_m } else { 0.0 },
        tau_s,
        tau_a,
        min_count: visits.iter().copied().min().unwrap_or(0),
        infinite_ratio: inf_s || inf_a,
    })
}

/// Whether every `n_{h,s,a} > n * d_bar_m`.
pub fn check_assumption_2(visits: &[u64], n: usize, d_bar_m: f64) -> bool {
    let threshold = n as f64 * d_bar_m;
    visits.iter().all(|&c| c as f64 > threshold)
}

/// Per-replication values of `(1/n) min_{h,s,a} sum_i d^{mu^i}_h(s,a)` over
/// reachable transition cells, one independent `collect` run each.
pub fn expected_exploration_samples(
    mdp: &TabularMdp,
    spec: &LoggerSpec,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    (0..replications)
        .map(|r| {
            let data = collect(mdp, spec, n, derive_seed(seed, r as u64))?;
            let avg = average_logger_occupancy(mdp, data.policy_seq())?;
            Ok(min_reachable_occupancy(mdp, &avg))
        })
        .collect()
}

/// Monte-Carlo estimate of the expected exploration of a logging process.
pub fn estimate_expected_exploration(
    mdp: &TabularMdp,
    spec: &LoggerSpec,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<f64> {
    let samples = expected_exploration_samples(mdp, spec, n, replications, seed)?;
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// MSE bound for non-adaptive multi-logger data.
///
/// Dominant: `(1/n) sum_{h,s,a} d^pi_h(s)^2 pi_h(a|s)^2 psi_{h,s,a} /
/// avg_i d^{mu^i}_h(s,a)` with `psi = Var[r_h + V^pi_{h+1}(s')]`. The
/// residual `tau_a^2 tau_s H^3 / (n^2 d_bar_m)` is order-only and reported
/// with constant 1.
pub fn nope_mse_bound_t6(mdp: &TabularMdp, pi: &Policy, policy_seq: &[Policy], n: usize) -> Result<BoundReport> {
    let shape = mdp.shape();
    if n == 0 || policy_seq.len() != n {
        return Err(Error::ShapeMismatch { what: "policy sequence length", expected: n, found: policy_seq.len() });
    }
    let target = exact_evaluate(mdp, pi)?;
    let variance = transition_variance_with(mdp, &target);
    let avg = average_logger_occupancy(mdp, policy_seq)?;
    let noise = mdp.reward_noise();
    let nf = n as f64;

    let mut per_cell = vec![0.0; shape.cells()];
    for cell in 0..shape.cells() {
        let (h, s, a) = shape.unravel(cell);
        let psi = noise.variance(mdp.reward(h, s, a)) + variance[cell];
        let weight = target.state_occupancy(h, s) * pi.prob(h, s, a);
        let numerator = weight * weight * psi;
        if numerator == 0.0 {
            continue;
        }
        if avg[cell] == 0.0 {
            return Err(Error::ZeroLoggerMass { h, s, a });
        }
        per_cell[cell] = numerator / avg[cell] / nf;
    }

    let stats = exploration_stats(mdp, pi, policy_seq, &vec![0; shape.cells()], n)?;
    let h = shape.horizon as f64;
    let residual = if stats.d_bar_m > 0.0 {
        stats.tau_a * stats.tau_a * stats.tau_s * h * h * h / (nf * nf * stats.d_bar_m)
    } else {
        f64::INFINITY
    };

    let min_state_mass = (0..shape.horizon)
        .flat_map(|hh| (0..shape.states).map(move |s| (hh, s)))
        .map(|(hh, s)| {
            let logger: f64 = (0..shape.actions).map(|a| avg[shape.cell(hh, s, a)]).sum();
            target.state_occupancy(hh, s).max(logger)
        })
        .fold(f64::INFINITY, f64::min);
    let hypotheses = vec![
        Hypothesis {
            name: "n > 16 log(n) / d_bar_m",
            lhs: nf,
            rhs: if stats.d_bar_m > 0.0 { 16.0 * log(nf) / stats.d_bar_m } else { f64::INFINITY },
            holds: false,
        },
        Hypothesis {
            name: "n > 4 H tau_a tau_s / min_{h,s} max(d^pi_h(s), avg d^mu_h(s))",
            lhs: nf,
            rhs: if min_state_mass > 0.0 {
                4.0 * h * stats.tau_a * stats.tau_s / min_state_mass
            } else {
                f64::INFINITY
            },
            holds: false,
        },
    ]
    .into_iter()
    .map(|mut hyp| {
        hyp.holds = hyp.lhs > hyp.rhs;
        hyp
    })
    .collect();

    let mut report = BoundReport::assemble(
        BoundKind::NopeMseT6,
        shape,
        per_cell,
        residual,
        BoundInputs { n, delta: None, d_bar_m: Some(stats.d_bar_m) },
    );
    report.residual_order_only = true;
    report.omitted_log_factors =
        Some("dominant term is up to logarithmic factors; residual constant unspecified (set to 1)");
    report.hypotheses = hypotheses;
    Ok(report)
}

/// `epsilon` with `exp(-2 eps^2 n^2 / sum xi_i^2) = delta`.
pub fn hoeffding_radius(n: usize, ranges: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || ranges.len() != n || ranges.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("hoeffding needs n >= 1 positive ranges"));
    }
    let sum_sq: f64 = ranges.iter().map(|x| x * x).sum();
    let nf = n as f64;
    Ok(sqrt(sum_sq * log(1.0 / delta) / (2.0 * nf * nf)))
}

/// `sqrt(sigma^2 log(1/delta) / n) + (2 xi / (3n)) log(1/delta)`.
pub fn bernstein_radius(n: usize, variance: f64, range: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || !(variance >= 0.0) || !(range > 0.0) {
        return Err(Error::invalid("bernstein needs n >= 1, variance >= 0, range > 0"));
    }
    let nf = n as f64;
    let l = log(1.0 / delta);
    Ok(sqrt(variance * l / nf) + 2.0 * range / (3.0 * nf) * l)
}

/// `sqrt(d) (1/sqrt(n) + sqrt(log(1/delta) / n))`.
pub fn l1_radius(n: usize, dim: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n == 0 || dim == 0 {
        return Err(Error::invalid("l1 radius needs n >= 1 and d >= 1"));
    }
    let nf = n as f64;
    Ok(sqrt(dim as f64) * (1.0 / sqrt(nf) + sqrt(log(1.0 / delta) / nf)))
}
