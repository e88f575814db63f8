//! Tabular MDPs, policies, trajectories and exact policy evaluation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::{sample_index, unit_f64, MAX_DIMENSION};

/// Tolerance used when validating probability vectors.
pub const PROB_TOL: f64 = 1e-12;

/// Dimensions `(S, A, H)` shared by MDPs, policies and datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Shape {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self> {
        for (name, v) in [("S", states), ("A", actions), ("H", horizon)] {
            if v == 0 || v >= MAX_DIMENSION {
                return Err(Error::invalid(alloc::format!("{name} = {v} must be in 1..{MAX_DIMENSION}")));
            }
        }
        Ok(Shape { states, actions, horizon })
    }

    /// `H * S * A`.
    pub fn cells(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    /// `(H - 1) * S * A`, the cells that have a transition.
    pub fn transition_cells(&self) -> usize {
        (self.horizon - 1) * self.states * self.actions
    }

    #[inline]
    pub fn cell(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn state_slot(&self, h: usize, s: usize) -> usize {
        h * self.states + s
    }

    /// Inverse of [`Shape::cell`].
    pub fn unravel(&self, cell: usize) -> (usize, usize, usize) {
        let a = cell % self.actions;
        let hs = cell / self.actions;
        (hs / self.states, hs % self.states, a)
    }

    fn check(&self, what: &'static str, other: Shape) -> Result<()> {
        if *self != other {
            return Err(Error::ShapeMismatch { what, expected: self.cells(), found: other.cells() });
        }
        Ok(())
    }
}

/// Distribution of realized rewards around the mean `r[h][s][a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RewardNoise {
    /// Realized reward equals the mean.
    #[default]
    Deterministic,
    /// Realized reward is `+1` with probability `(1 + mean) / 2`, else `-1`.
    TwoPoint,
}

impl RewardNoise {
    pub fn is_random(self) -> bool {
        !matches!(self, RewardNoise::Deterministic)
    }

    /// Realized reward for a uniform draw `u` in `[0, 1)`.
    pub fn realize(self, mean: f64, u: f64) -> f64 {
        match self {
            RewardNoise::Deterministic => mean,
            RewardNoise::TwoPoint => {
                if u < 0.5 * (1.0 + mean) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn variance(self, mean: f64) -> f64 {
        match self {
            RewardNoise::Deterministic => 0.0,
            RewardNoise::TwoPoint => (1.0 - mean * mean).max(0.0),
        }
    }
}

/// A violated MDP invariant. Steps are reported 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TransitionSum { h: usize, s: usize, a: usize, sum: f64 },
    NegativeTransition { h: usize, s: usize, a: usize, next: usize, value: f64 },
    InitialSum { sum: f64 },
    NegativeInitial { s: usize, value: f64 },
    RewardOutOfRange { h: usize, s: usize, a: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::TransitionSum { h, s, a, sum } => {
                write!(f, "transition row (h={}, s={s}, a={a}) sums to {sum}", h + 1)
            }
            Violation::NegativeTransition { h, s, a, next, value } => {
                write!(f, "negative transition probability {value} at (h={}, s={s}, a={a}, s'={next})", h + 1)
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::NegativeInitial { s, value } => {
                write!(f, "negative initial probability {value} at s={s}")
            }
            Violation::RewardOutOfRange { h, s, a, value } => {
                write!(f, "reward out of [-1,1] at (h={}, s={s}, a={a}): {value}", h + 1)
            }
        }
    }
}

/// Tabular finite-horizon MDP.
///
/// `transitions` is laid out `[h][s][a][s']` for `h in 0..H-1`, `rewards`
/// as `[h][s][a]` for `h in 0..H`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    shape: Shape,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    initial: Vec<f64>,
    reward_noise: RewardNoise,
}

impl TabularMdp {
    /// Builds an MDP after checking buffer lengths only. Use
    /// [`TabularMdp::validate`] to check the probabilistic invariants.
    pub fn from_parts(
        shape: Shape,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        reward_noise: RewardNoise,
    ) -> Result<Self> {
        let expect = [
            ("transitions", shape.transition_cells() * shape.states, transitions.len()),
            ("rewards", shape.cells(), rewards.len()),
            ("initial distribution", shape.states, initial.len()),
        ];
        for (what, expected, found) in expect {
            if expected != found {
                return Err(Error::ShapeMismatch { what, expected, found });
            }
        }
        Ok(TabularMdp { shape, transitions, rewards, initial, reward_noise })
    }

    /// Builds and validates an MDP.
    pub fn new(
        shape: Shape,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        reward_noise: RewardNoise,
    ) -> Result<Self> {
        let mdp = Self::from_parts(shape, transitions, rewards, initial, reward_noise)?;
        let violations = mdp.validate();
        if violations.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(violations))
        }
    }

    /// Returns every violated invariant; empty means well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let Shape { states, actions, horizon } = self.shape;
        let mut out = Vec::new();
        for h in 0..horizon.saturating_sub(1) {
            for s in 0..states {
                for a in 0..actions {
                    let row = self.transition(h, s, a);
                    let sum: f64 = row.iter().sum();
                    for (next, &p) in row.iter().enumerate() {
                        if !(p >= 0.0) {
                            out.push(Violation::NegativeTransition { h, s, a, next, value: p });
                        }
                    }
                    if !((sum - 1.0).abs() <= PROB_TOL) {
                        out.push(Violation::TransitionSum { h, s, a, sum });
                    }
                }
            }
        }
        let sum: f64 = self.initial.iter().sum();
        for (s, &p) in self.initial.iter().enumerate() {
            if !(p >= 0.0) {
                out.push(Violation::NegativeInitial { s, value: p });
            }
        }
        if !((sum - 1.0).abs() <= PROB_TOL) {
            out.push(Violation::InitialSum { sum });
        }
        for (cell, &r) in self.rewards.iter().enumerate() {
            if !(-1.0..=1.0).contains(&r) {
                let (h, s, a) = self.shape.unravel(cell);
                out.push(Violation::RewardOutOfRange { h, s, a, value: r });
            }
        }
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn states(&self) -> usize {
        self.shape.states
    }

    pub fn actions(&self) -> usize {
        self.shape.actions
    }

    pub fn horizon(&self) -> usize {
        self.shape.horizon
    }

    /// `P(. | s, a)` for the transition after step `h` (`h < H - 1`).
    #[inline]
    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.cell(h, s, a) * self.shape.states;
        &self.transitions[start..start + self.shape.states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.shape.cell(h, s, a)]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }

    /// Same dynamics with a different mean-reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(self.shape, self.transitions.clone(), rewards, self.initial.clone(), self.reward_noise)
    }

    /// Cells `(h, s, a)` whose state is reachable at step `h` under some
    /// action sequence. Returned as a mask over [`Shape::cell`] indices.
    pub fn reachable_cells(&self) -> Vec<bool> {
        let Shape { states, actions, horizon } = self.shape;
        let mut reach: Vec<bool> = self.initial.iter().map(|&p| p > 0.0).collect();
        let mut mask = vec![false; self.shape.cells()];
        for h in 0..horizon {
            for s in 0..states {
                if reach[s] {
                    for a in 0..actions {
                        mask[self.shape.cell(h, s, a)] = true;
                    }
                }
            }
            if h + 1 < horizon {
                let mut next = vec![false; states];
                for s in (0..states).filter(|&s| reach[s]) {
                    for a in 0..actions {
                        for (sp, &p) in self.transition(h, s, a).iter().enumerate() {
                            if p > 0.0 {
                                next[sp] = true;
                            }
                        }
                    }
                }
                reach = next;
            }
        }
        mask
    }
}

/// Non-stationary stochastic policy, `pi[h][s]` a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    shape: Shape,
    probs: Vec<f64>,
    deterministic: bool,
}

impl Policy {
    pub fn new(shape: Shape, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != shape.cells() {
            return Err(Error::ShapeMismatch { what: "policy", expected: shape.cells(), found: probs.len() });
        }
        let mut deterministic = true;
        for (row_idx, row) in probs.chunks(shape.actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || !((sum - 1.0).abs() <= PROB_TOL) {
                return Err(Error::InvalidPolicy { h: row_idx / shape.states, s: row_idx % shape.states, sum });
            }
            deterministic &= row.iter().filter(|&&p| p == 1.0).count() == 1;
        }
        Ok(Policy { shape, probs, deterministic })
    }

    /// Deterministic policy from `actions[h * S + s]`.
    pub fn from_actions(shape: Shape, actions: &[usize]) -> Result<Self> {
        if actions.len() != shape.horizon * shape.states {
            return Err(Error::ShapeMismatch {
                what: "deterministic policy",
                expected: shape.horizon * shape.states,
                found: actions.len(),
            });
        }
        let mut probs = vec![0.0; shape.cells()];
        for (slot, &a) in actions.iter().enumerate() {
            if a >= shape.actions {
                return Err(Error::invalid(alloc::format!("action {a} out of range")));
            }
            probs[slot * shape.actions + a] = 1.0;
        }
        Ok(Policy { shape, probs, deterministic: true })
    }

    /// Takes action `a` everywhere.
    pub fn constant(shape: Shape, a: usize) -> Result<Self> {
        Self::from_actions(shape, &vec![a; shape.horizon * shape.states])
    }

    pub fn uniform(shape: Shape) -> Self {
        let p = 1.0 / shape.actions as f64;
        Policy { shape, probs: vec![p; shape.cells()], deterministic: shape.actions == 1 }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[self.shape.cell(h, s, a)]
    }

    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = self.shape.cell(h, s, 0);
        &self.probs[start..start + self.shape.actions]
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// The chosen action if the row at `(h, s)` is one-hot.
    pub fn action_at(&self, h: usize, s: usize) -> Option<usize> {
        let row = self.row(h, s);
        row.iter().position(|&p| p == 1.0)
    }

    pub fn sample_action(&self, h: usize, s: usize, u: f64) -> usize {
        sample_index(self.row(h, s), u)
    }
}

/// One step of a trajectory. `next_state` is `None` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>) -> Self {
        Trajectory { steps }
    }

    /// Checks length, index ranges and the chaining of `next_state`.
    pub fn check(&self, shape: Shape) -> Result<()> {
        if self.steps.len() != shape.horizon {
            return Err(Error::ShapeMismatch {
                what: "trajectory length",
                expected: shape.horizon,
                found: self.steps.len(),
            });
        }
        for (h, step) in self.steps.iter().enumerate() {
            if step.state >= shape.states || step.action >= shape.actions {
                return Err(Error::invalid(alloc::format!("step {} out of range", h + 1)));
            }
            if !(-1.0..=1.0).contains(&step.reward) {
                return Err(Error::invalid(alloc::format!("reward at step {} out of [-1,1]", h + 1)));
            }
            let last = h + 1 == shape.horizon;
            match step.next_state {
                None if last => {}
                Some(next) if !last && next == self.steps[h + 1].state => {}
                _ => return Err(Error::invalid(alloc::format!("next_state at step {} does not chain", h + 1))),
            }
        }
        Ok(())
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// `V^pi`, `Q^pi`, occupancy `d^pi_h(s, a)` and the value `v^pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    shape: Shape,
    values: Vec<f64>,
    q: Vec<f64>,
    occupancy: Vec<f64>,
    pub value: f64,
}

impl ValueTables {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.values[self.shape.state_slot(h, s)]
    }

    #[inline]
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[self.shape.cell(h, s, a)]
    }

    #[inline]
    pub fn occupancy(&self, h: usize, s: usize, a: usize) -> f64 {
        self.occupancy[self.shape.cell(h, s, a)]
    }

    /// `d^pi_h(s) = sum_a d^pi_h(s, a)`.
    pub fn state_occupancy(&self, h: usize, s: usize) -> f64 {
        let start = self.shape.cell(h, s, 0);
        self.occupancy[start..start + self.shape.actions].iter().sum()
    }

    /// Occupancy tensor laid out like [`Shape::cell`].
    pub fn occupancies(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Exact `V^pi`, `Q^pi` by backward induction and `d^pi_h` by forward
/// propagation.
pub fn exact_evaluate(mdp: &TabularMdp, pi: &Policy) -> Result<ValueTables> {
    let shape = mdp.shape();
    shape.check("policy vs MDP", pi.shape())?;
    let Shape { states, actions, horizon } = shape;

    let mut values = vec![0.0; horizon * states];
    let mut q = vec![0.0; shape.cells()];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut v = 0.0;
            for a in 0..actions {
                let mut qa = mdp.reward(h, s, a);
                if h + 1 < horizon {
                    let next = &values[(h + 1) * states..(h + 2) * states];
                    qa += dot(mdp.transition(h, s, a), next);
                }
                q[shape.cell(h, s, a)] = qa;
                v += pi.prob(h, s, a) * qa;
            }
            values[shape.state_slot(h, s)] = v;
        }
    }

    let mut occupancy = vec![0.0; shape.cells()];
    let mut state_dist = mdp.initial().to_vec();
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..actions {
                occupancy[shape.cell(h, s, a)] = state_dist[s] * pi.prob(h, s, a);
            }
        }
        if h + 1 < horizon {
            let mut next = vec![0.0; states];
            for s in 0..states {
                for a in 0..actions {
                    let mass = occupancy[shape.cell(h, s, a)];
                    if mass == 0.0 {
                        continue;
                    }
                    for (sp, &p) in mdp.transition(h, s, a).iter().enumerate() {
                        next[sp] += mass * p;
                    }
                }
            }
            state_dist = next;
        }
    }

    let value = dot(mdp.initial(), &values[..states]);
    Ok(ValueTables { shape, values, q, occupancy, value })
}

/// Samples one trajectory from a single sequential random stream.
pub fn sample_trajectory<R: RngCore + ?Sized>(mdp: &TabularMdp, pi: &Policy, rng: &mut R) -> Trajectory {
    let horizon = mdp.horizon();
    let noise = mdp.reward_noise();
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_index(mdp.initial(), unit_f64(rng.next_u64()));
    for h in 0..horizon {
        let a = pi.sample_action(h, s, unit_f64(rng.next_u64()));
        let mean = mdp.reward(h, s, a);
        let reward = if noise.is_random() { noise.realize(mean, unit_f64(rng.next_u64())) } else { mean };
        let next_state =
            if h + 1 < horizon { Some(sample_index(mdp.transition(h, s, a), unit_f64(rng.next_u64()))) } else { None };
        steps.push(Step { state: s, action: a, reward, next_state });
        if let Some(sp) = next_state {
            s = sp;
        }
    }
    Trajectory { steps }
}

/// `Var_{s' ~ P[h](.|s,a)}[V^pi_{h+1}(s')]` for `h < H - 1`; zero on the last
/// layer.
pub fn transition_variance(mdp: &TabularMdp, pi: &Policy) -> Result<Vec<f64>> {
    let tables = exact_evaluate(mdp, pi)?;
    Ok(transition_variance_with(mdp, &tables))
}

pub(crate) fn transition_variance_with(mdp: &TabularMdp, tables: &ValueTables) -> Vec<f64> {
    let shape = mdp.shape();
    let Shape { states, actions, horizon } = shape;
    let mut out = vec![0.0; shape.cells()];
    for h in 0..horizon.saturating_sub(1) {
        let next = &tables.values[(h + 1) * states..(h + 2) * states];
        for s in 0..states {
            for a in 0..actions {
                let p = mdp.transition(h, s, a);
                let mean = dot(p, next);
                out[shape.cell(h, s, a)] = p.iter().zip(next).map(|(&pi, &v)| pi * (v - mean) * (v - mean)).sum();
            }
        }
    }
    out
}

/// Greedy policy of backward induction on `Q*`, lowest action on ties.
pub fn optimal_policy(mdp: &TabularMdp) -> Policy {
    extremal_policy(mdp, |candidate, best| candidate > best)
}

/// The value-minimizing policy, lowest action on ties.
pub fn pessimal_policy(mdp: &TabularMdp) -> Policy {
    extremal_policy(mdp, |candidate, best| candidate < best)
}

fn extremal_policy(mdp: &TabularMdp, better: impl Fn(f64, f64) -> bool) -> Policy {
    let shape = mdp.shape();
    let Shape { states, actions, horizon } = shape;
    let mut values = vec![0.0; (horizon + 1) * states];
    let mut choice = vec![0usize; horizon * states];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut best = f64::NAN;
            for a in 0..actions {
                let mut qa = mdp.reward(h, s, a);
                if h + 1 < horizon {
                    qa += dot(mdp.transition(h, s, a), &values[(h + 1) * states..(h + 2) * states]);
                }
                if a == 0 || better(qa, best) {
                    best = qa;
                    choice[shape.state_slot(h, s)] = a;
                }
            }
            values[shape.state_slot(h, s)] = best;
        }
    }
    Policy::from_actions(shape, &choice).expect("actions are in range")
}

/// All `A^(S*H)` deterministic policies, refusing to enumerate more than
/// `limit`.
pub fn deterministic_policies(shape: Shape, limit: usize) -> Result<Vec<Policy>> {
    let slots = shape.horizon * shape.states;
    let mut total: usize = 1;
    for _ in 0..slots {
        total = total
            .checked_mul(shape.actions)
            .filter(|&t| t <= limit)
            .ok_or_else(|| Error::invalid("too many deterministic policies to enumerate"))?;
    }
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; slots];
    for _ in 0..total {
        out.push(Policy::from_actions(shape, &digits)?);
        for d in digits.iter_mut() {
            *d += 1;
            if *d < shape.actions {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_mdp, tree_mdp, TreeRewards};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> TabularMdp {
        let shape = Shape::new(2, 2, 2).unwrap();
        TabularMdp::new(
            shape,
            vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.7],
            vec![0.1, -0.2, 0.3, 0.4, 1.0, -1.0, 0.0, 0.5],
            vec![0.6, 0.4],
            RewardNoise::Deterministic,
        )
        .unwrap()
    }

    #[test]
    fn well_formed_mdp_validates() {
        assert!(two_state().validate().is_empty());
    }

    #[test]
    fn short_transition_row_is_named() {
        let mdp = two_state();
        let mut p = mdp.transitions().to_vec();
        p[2] = 0.9;
        let bad =
            TabularMdp::from_parts(mdp.shape(), p, mdp.rewards().to_vec(), vec![0.6, 0.4], RewardNoise::Deterministic)
                .unwrap();
        let v = bad.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::TransitionSum { h: 0, s: 0, a: 1, .. }));
    }

    #[test]
    fn reward_out_of_range_is_reported() {
        let mdp = two_state();
        let mut r = mdp.rewards().to_vec();
        r[5] = 1.5;
        let bad = TabularMdp::from_parts(
            mdp.shape(),
            mdp.transitions().to_vec(),
            r,
            vec![0.6, 0.4],
            RewardNoise::Deterministic,
        )
        .unwrap();
        let v = bad.validate();
        assert_eq!(v.len(), 1);
        assert!(alloc::format!("{}", v[0]).contains("reward out of [-1,1]"));
        assert!(matches!(
            TabularMdp::new(
                bad.shape(),
                bad.transitions().to_vec(),
                bad.rewards().to_vec(),
                vec![0.6, 0.4],
                RewardNoise::Deterministic
            ),
            Err(Error::InvalidMdp(_))
        ));
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(Shape::new(3, 2, 4).unwrap(), RewardNoise::Deterministic, &mut rng);
        let zero = mdp.with_rewards(vec![0.0; mdp.shape().cells()]).unwrap();
        let t = exact_evaluate(&zero, &Policy::uniform(zero.shape())).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_chain_value_is_horizon() {
        let shape = Shape::new(1, 1, 5).unwrap();
        let mdp = TabularMdp::new(shape, vec![1.0; 4], vec![1.0; 5], vec![1.0], RewardNoise::Deterministic).unwrap();
        let t = exact_evaluate(&mdp, &Policy::uniform(shape)).unwrap();
        assert_eq!(t.value, 5.0);
    }

    #[test]
    fn tree_always_right_value_is_one() {
        let m2 = tree_mdp(TreeRewards::RightPaysAtLevelTwo);
        let pi = Policy::constant(m2.shape(), 1).unwrap();
        assert_eq!(exact_evaluate(&m2, &pi).unwrap().value, 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mdp = two_state();
        let pi = Policy::uniform(Shape::new(2, 2, 3).unwrap());
        assert!(matches!(exact_evaluate(&mdp, &pi), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn value_tables_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let shape = Shape::new(3, 2, 5).unwrap();
            let mdp = random_mdp(shape, RewardNoise::Deterministic, &mut rng);
            let pi = Policy::uniform(shape);
            let t = exact_evaluate(&mdp, &pi).unwrap();
            for h in 0..5 {
                let total: f64 = (0..3).map(|s| t.state_occupancy(h, s)).sum();
                assert!((total - 1.0).abs() < 1e-10);
                for s in 0..3 {
                    assert!(t.v(h, s).abs() <= (5 - h) as f64 + 1e-12);
                }
            }
            let v: f64 = (0..3).map(|s| mdp.initial()[s] * t.v(0, s)).sum();
            assert!((v - t.value).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_sampling_is_unique() {
        let shape = Shape::new(2, 2, 3).unwrap();
        let mdp = TabularMdp::new(
            shape,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.5; 12],
            vec![1.0, 0.0],
            RewardNoise::Deterministic,
        )
        .unwrap();
        let pi = Policy::constant(shape, 0).unwrap();
        let a = sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(999));
        assert_eq!(a, b);
        let states: Vec<usize> = a.steps.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![0, 1, 0]);
        a.check(shape).unwrap();
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random_mdp(Shape::new(3, 3, 4).unwrap(), RewardNoise::TwoPoint, &mut rng);
        let pi = Policy::uniform(mdp.shape());
        let a = sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(77));
        let b = sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn tree_branch_frequency() {
        let mdp = tree_mdp(TreeRewards::Zero);
        let pi = Policy::uniform(mdp.shape());
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_trajectory(&mdp, &pi, &mut rng).steps[1].state == 1).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn bernoulli_transition_variance() {
        let shape = Shape::new(2, 1, 2).unwrap();
        let mdp = TabularMdp::new(
            shape,
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0],
            RewardNoise::Deterministic,
        )
        .unwrap();
        let var = transition_variance(&mdp, &Policy::uniform(shape)).unwrap();
        assert!((var[0] - 0.25).abs() < 1e-15);
        assert_eq!(var[shape.cell(1, 0, 0)], 0.0);
    }

    #[test]
    fn deterministic_transitions_have_zero_variance() {
        let mdp = tree_mdp(TreeRewards::RightPaysAtLevelTwo);
        let var = transition_variance(&mdp, &Policy::uniform(mdp.shape())).unwrap();
        // Only the root's 50/50 split carries variance.
        let shape = mdp.shape();
        for (cell, v) in var.iter().enumerate() {
            let (h, _, _) = shape.unravel(cell);
            if h > 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn variance_matches_raw_moment_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = Shape::new(3, 2, 4).unwrap();
        let mdp = random_mdp(shape, RewardNoise::Deterministic, &mut rng);
        let pi = Policy::uniform(shape);
        let var = transition_variance(&mdp, &pi).unwrap();
        let t = exact_evaluate(&mdp, &pi).unwrap();
        for h in 0..3 {
            for s in 0..3 {
                for a in 0..2 {
                    let p = mdp.transition(h, s, a);
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for sp in 0..3 {
                        m1 += p[sp] * t.v(h + 1, sp);
                        m2 += p[sp] * t.v(h + 1, sp) * t.v(h + 1, sp);
                    }
                    assert!((var[shape.cell(h, s, a)] - (m2 - m1 * m1)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn optimal_beats_every_deterministic_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let shape = Shape::new(2, 2, 3).unwrap();
        let mdp = random_mdp(shape, RewardNoise::Deterministic, &mut rng);
        let best = exact_evaluate(&mdp, &optimal_policy(&mdp)).unwrap().value;
        let worst = exact_evaluate(&mdp, &pessimal_policy(&mdp)).unwrap().value;
        let all = deterministic_policies(shape, 1 << 10).unwrap();
        assert_eq!(all.len(), 64);
        for pi in &all {
            let v = exact_evaluate(&mdp, pi).unwrap().value;
            assert!(v <= best + 1e-12 && v >= worst - 1e-12);
        }
    }

    #[test]
    fn policy_validation() {
        let shape = Shape::new(1, 2, 1).unwrap();
        assert!(Policy::new(shape, vec![0.5, 0.4]).is_err());
        assert!(Policy::new(shape, vec![0.0, 1.0]).unwrap().is_deterministic());
        assert!(!Policy::new(shape, vec![0.5, 0.5]).unwrap().is_deterministic());
    }
}
