//! The TMIS plug-in estimator.
//!
//! The estimate is the value of the target policy in the empirical MDP
//! `(P_hat, r_hat, d1_hat)`. Cells with no visits get an all-zero transition
//! row and zero reward, so probability mass that reaches them leaks out
//! instead of being redistributed.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Counts, Dataset};
use crate::error::{Error, Result};
use crate::mdp::{dot, Policy, Shape, TabularMdp};

/// Plug-in model built from counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    shape: Shape,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    initial: Vec<f64>,
    source_counts: Vec<u64>,
    known_r_d1: bool,
}

impl EmpiricalModel {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `P_hat(. | s, a)` after step `h`; all zeros if the cell is unvisited.
    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.cell(h, s, a) * self.shape.states;
        &self.transitions[start..start + self.shape.states]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.shape.cell(h, s, a)]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn source_counts(&self) -> &[u64] {
        &self.source_counts
    }

    /// True when `r` and `d1` were taken from the true MDP.
    pub fn known_r_d1(&self) -> bool {
        self.known_r_d1
    }
}

/// Builds `(P_hat, r_hat, d1_hat)` from counts. With `known = Some(mdp)` the
/// reward table and initial distribution are copied from `mdp` and only the
/// transitions are estimated.
pub fn build_empirical_model(counts: &Counts, known: Option<&TabularMdp>) -> Result<EmpiricalModel> {
    let shape = counts.shape();
    if counts.n() == 0 {
        return Err(Error::invalid("empirical model needs at least one trajectory"));
    }
    let Shape { states, actions, horizon } = shape;
    let mut transitions = vec![0.0; shape.transition_cells() * states];
    for h in 0..horizon.saturating_sub(1) {
        for s in 0..states {
            for a in 0..actions {
                let n = counts.visit(h, s, a);
                if n == 0 {
                    continue;
                }
                let start = shape.cell(h, s, a) * states;
                for (slot, &c) in transitions[start..start + states].iter_mut().zip(counts.transition_row(h, s, a)) {
                    *slot = c as f64 / n as f64;
                }
            }
        }
    }

    let (rewards, initial) = match known {
        Some(mdp) => {
            if mdp.shape() != shape {
                return Err(Error::ShapeMismatch {
                    what: "known MDP",
                    expected: shape.cells(),
                    found: mdp.shape().cells(),
                });
            }
            (mdp.rewards().to_vec(), mdp.initial().to_vec())
        }
        None => {
            let rewards = (0..shape.cells())
                .map(|cell| {
                    let n = counts.visits()[cell];
                    if n == 0 {
                        0.0
                    } else {
                        let (h, s, a) = shape.unravel(cell);
                        counts.reward_sum(h, s, a) / n as f64
                    }
                })
                .collect();
            let total: u64 = counts.initial_counts().iter().sum();
            let initial = counts
                .initial_counts()
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            (rewards, initial)
        }
    };

    Ok(EmpiricalModel {
        shape,
        transitions,
        rewards,
        initial,
        source_counts: counts.visits().to_vec(),
        known_r_d1: known.is_some(),
    })
}

/// Output of [`tmis_value`].
#[derive(Debug, Clone, PartialEq)]
pub struct TmisEstimate {
    shape: Shape,
    /// `v_hat^pi`.
    pub value: f64,
    state_occupancy: Vec<f64>,
    values: Vec<f64>,
}

impl TmisEstimate {
    /// `d_hat^pi_h(s)`.
    pub fn state_occupancy(&self, h: usize, s: usize) -> f64 {
        self.state_occupancy[self.shape.state_slot(h, s)]
    }

    /// `d_hat^pi_h(s, a) = d_hat^pi_h(s) pi_h(a|s)`.
    pub fn occupancy(&self, pi: &Policy, h: usize, s: usize, a: usize) -> f64 {
        self.state_occupancy(h, s) * pi.prob(h, s, a)
    }

    /// `V_hat^pi_h(s)` from backward induction on the empirical model.
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.values[self.shape.state_slot(h, s)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `v_hat = sum_h <d_hat_h, r_hat^pi_h>` with `d_hat_{h+1} = P_hat^pi_h d_hat_h`.
pub fn tmis_value(model: &EmpiricalModel, pi: &Policy) -> Result<TmisEstimate> {
    let shape = model.shape;
    if pi.shape() != shape {
        return Err(Error::ShapeMismatch {
            what: "policy vs empirical model",
            expected: shape.cells(),
            found: pi.shape().cells(),
        });
    }
    let Shape { states, actions, horizon } = shape;

    let mut state_occupancy = vec![0.0; horizon * states];
    let mut dist = model.initial.clone();
    let mut value = 0.0;
    for h in 0..horizon {
        state_occupancy[h * states..(h + 1) * states].copy_from_slice(&dist);
        let mut next = vec![0.0; states];
        for s in 0..states {
            if dist[s] == 0.0 {
                continue;
            }
            let mut r_pi = 0.0;
            for a in 0..actions {
                let p = pi.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                r_pi += p * model.reward(h, s, a);
                if h + 1 < horizon {
                    for (sp, &t) in model.transition(h, s, a).iter().enumerate() {
                        next[sp] += dist[s] * p * t;
                    }
                }
            }
            value += dist[s] * r_pi;
        }
        dist = next;
    }

    let mut values = vec![0.0; horizon * states];
    for h in (0..horizon).rev() {
        for s in 0..states {
            let mut v = 0.0;
            for a in 0..actions {
                let p = pi.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                let mut q = model.reward(h, s, a);
                if h + 1 < horizon {
                    q += dot(model.transition(h, s, a), &values[(h + 1) * states..(h + 2) * states]);
                }
                v += p * q;
            }
            values[h * states + s] = v;
        }
    }

    Ok(TmisEstimate { shape, value, state_occupancy, values })
}

/// Which transition cells enter `N = min n_{h,s,a}` in [`discard_to_iid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MinOver {
    /// Every `(h, s, a)` with `h < H - 1`; any unvisited cell gives `N = 0`.
    AllCells,
    /// Only cells visited at least once.
    #[default]
    VisitedCells,
}

/// Keeps, for every cell, only the chronologically first `N` observed
/// transitions (trajectory order, then step), with `N` the smallest
/// transition-cell count. Last-step reward observations are truncated to `N`
/// as well. Initial states are kept in full.
pub fn discard_to_iid(data: &Dataset, min_over: MinOver) -> (Counts, u64) {
    let shape = data.shape();
    let counts = data.counts();
    let transition_cells = shape.transition_cells();
    let keep = counts.visits()[..transition_cells]
        .iter()
        .copied()
        .filter(|&c| min_over == MinOver::AllCells || c > 0)
        .min()
        .unwrap_or(0);

    let mut visits = vec![0u64; shape.cells()];
    let mut transitions = vec![0u64; transition_cells * shape.states];
    let mut reward_sums = vec![0.0; shape.cells()];
    for t in data.trajectories() {
        for (h, step) in t.steps.iter().enumerate() {
            let cell = shape.cell(h, step.state, step.action);
            if visits[cell] >= keep {
                continue;
            }
            visits[cell] += 1;
            reward_sums[cell] += step.reward;
            if let Some(next) = step.next_state {
                transitions[cell * shape.states + next] += 1;
            }
        }
    }
    let reduced =
        Counts::from_raw(shape, data.len(), visits, transitions, reward_sums, counts.initial_counts().to_vec());
    (reduced, keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_mdp, tree_mdp, TreeRewards};
    use crate::loggers::{collect, make_lower_bound_instances, took_left_branch, LoggerSpec};
    use crate::mdp::{exact_evaluate, RewardNoise, Step, Trajectory};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(s: usize, a: usize, r: f64, next: Option<usize>) -> Step {
        Step { state: s, action: a, reward: r, next_state: next }
    }

    #[test]
    fn single_trajectory_gives_one_hot_rows() {
        let shape = Shape::new(2, 2, 3).unwrap();
        let t = Trajectory::new(vec![step(0, 1, 0.2, Some(1)), step(1, 0, -0.4, Some(0)), step(0, 0, 1.0, None)]);
        let model = build_empirical_model(&Counts::from_trajectories(shape, [&t]), None).unwrap();
        assert_eq!(model.transition(0, 0, 1), &[0.0, 1.0]);
        assert_eq!(model.transition(1, 1, 0), &[1.0, 0.0]);
        assert_eq!(model.transition(0, 0, 0), &[0.0, 0.0]);
        assert_eq!(model.reward(1, 1, 0), -0.4);
        assert_eq!(model.reward(1, 0, 0), 0.0);
        assert_eq!(model.initial(), &[1.0, 0.0]);
    }

    #[test]
    fn ratio_of_pair_counts() {
        let shape = Shape::new(2, 1, 2).unwrap();
        let traj = |next| Trajectory::new(vec![step(0, 0, 0.0, Some(next)), step(next, 0, 0.0, None)]);
        let ts = [traj(0), traj(0), traj(1), traj(0)];
        let model = build_empirical_model(&Counts::from_trajectories(shape, &ts), None).unwrap();
        assert_eq!(model.transition(0, 0, 0), &[0.75, 0.25]);
    }

    #[test]
    fn known_variant_passes_r_and_d1_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = random_mdp(Shape::new(3, 2, 3).unwrap(), RewardNoise::TwoPoint, &mut rng);
        let data = collect(&mdp, &LoggerSpec::Fixed(Policy::uniform(mdp.shape())), 5, 1).unwrap();
        let model = build_empirical_model(data.counts(), Some(&mdp)).unwrap();
        assert!(model.known_r_d1());
        assert_eq!(model.initial(), mdp.initial());
        for cell in 0..mdp.shape().cells() {
            let (h, s, a) = mdp.shape().unravel(cell);
            assert_eq!(model.reward(h, s, a), mdp.reward(h, s, a));
        }
    }

    #[test]
    fn empty_counts_are_rejected() {
        assert!(build_empirical_model(&Counts::new(Shape::new(1, 1, 1).unwrap()), None).is_err());
    }

    #[test]
    fn unvisited_target_cells_contribute_nothing() {
        let shape = Shape::new(2, 2, 2).unwrap();
        // Data only ever takes action 0; the target takes action 1.
        let t = Trajectory::new(vec![step(0, 0, 0.5, Some(1)), step(1, 0, 0.5, None)]);
        let model = build_empirical_model(&Counts::from_trajectories(shape, [&t]), None).unwrap();
        let est = tmis_value(&model, &Policy::constant(shape, 1).unwrap()).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.state_occupancy(1, 0) + est.state_occupancy(1, 1), 0.0);
    }

    #[test]
    fn left_branch_of_the_tree_is_blind_to_the_right_reward() {
        let lb = make_lower_bound_instances();
        let mut checked = 0;
        for seed in 0..40 {
            let data = collect(&lb.m2, &lb.logger, 12, seed).unwrap();
            if !took_left_branch(&data) {
                continue;
            }
            let model = build_empirical_model(data.counts(), None).unwrap();
            let est = tmis_value(&model, &lb.target).unwrap();
            assert_eq!(est.value, 0.0);
            assert_eq!(exact_evaluate(&lb.m2, &lb.target).unwrap().value, 1.0);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn plug_in_of_the_truth_is_exact() {
        let mdp = tree_mdp(TreeRewards::RightPaysAtLevelTwo);
        // Build counts whose ratios equal the true kernel: two trajectories per
        // root branch and action.
        let mut ts = Vec::new();
        for mid in [1usize, 2] {
            for a in [0usize, 1] {
                let leaf = 3 + 2 * (mid - 1) + a;
                let r = mdp.reward(1, mid, a);
                for root_a in [0usize, 1] {
                    ts.push(Trajectory::new(vec![
                        step(0, root_a, 0.0, Some(mid)),
                        step(mid, a, r, Some(leaf)),
                        step(leaf, 0, 0.0, None),
                    ]));
                }
            }
        }
        let model = build_empirical_model(&Counts::from_trajectories(mdp.shape(), &ts), None).unwrap();
        for pi in [Policy::constant(mdp.shape(), 1).unwrap(), Policy::uniform(mdp.shape())] {
            let est = tmis_value(&model, &pi).unwrap();
            assert_eq!(est.value, exact_evaluate(&mdp, &pi).unwrap().value);
        }
    }

    #[test]
    fn discard_truncates_to_min_count() {
        let shape = Shape::new(3, 1, 2).unwrap();
        let mut data = Dataset::new(shape);
        let pi = Policy::uniform(shape);
        for (s, times) in [(0usize, 2usize), (1, 3), (2, 5)] {
            for k in 0..times {
                let next = k % 3;
                data.push(Trajectory::new(vec![step(s, 0, 0.1, Some(next)), step(next, 0, 0.0, None)]), pi.clone())
                    .unwrap();
            }
        }
        let (reduced, n) = discard_to_iid(&data, MinOver::VisitedCells);
        assert_eq!(n, 2);
        assert_eq!(&reduced.visits()[..3], &[2, 2, 2]);
        // The first two transitions out of state 2 went to 0 and 1.
        assert_eq!(reduced.transition_row(0, 2, 0), &[1, 1, 0]);
    }

    #[test]
    fn discard_is_a_no_op_when_counts_are_equal() {
        let shape = Shape::new(2, 1, 2).unwrap();
        let mut data = Dataset::new(shape);
        for s in [0usize, 1, 1, 0] {
            data.push(Trajectory::new(vec![step(s, 0, 0.0, Some(s)), step(s, 0, 0.0, None)]), Policy::uniform(shape))
                .unwrap();
        }
        let (reduced, n) = discard_to_iid(&data, MinOver::AllCells);
        assert_eq!(n, 2);
        assert_eq!(reduced.visits(), data.counts().visits());
        assert_eq!(reduced.transition_row(0, 1, 0), data.counts().transition_row(0, 1, 0));
    }

    #[test]
    fn all_cells_mode_sees_unvisited_cells() {
        let shape = Shape::new(2, 2, 2).unwrap();
        let mut data = Dataset::new(shape);
        data.push(Trajectory::new(vec![step(0, 0, 0.0, Some(0)), step(0, 0, 0.0, None)]), Policy::uniform(shape))
            .unwrap();
        assert_eq!(discard_to_iid(&data, MinOver::AllCells).1, 0);
        assert_eq!(discard_to_iid(&data, MinOver::VisitedCells).1, 1);
    }
}
