//! Logged datasets and their sufficient statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mdp::{Policy, Shape, Trajectory};

/// Visit counts `n_{h,s,a}`, pair counts `n_{h,s,a,s'}`, reward sums and
/// initial-state counts of a set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Counts {
    shape: Shape,
    n: usize,
    visits: Vec<u64>,
    transitions: Vec<u64>,
    reward_sums: Vec<f64>,
    initial: Vec<u64>,
}

impl Counts {
    pub fn new(shape: Shape) -> Self {
        Counts {
            shape,
            n: 0,
            visits: vec![0; shape.cells()],
            transitions: vec![0; shape.transition_cells() * shape.states],
            reward_sums: vec![0.0; shape.cells()],
            initial: vec![0; shape.states],
        }
    }

    /// Adds one trajectory. The trajectory must already fit `shape`.
    pub fn add(&mut self, trajectory: &Trajectory) {
        let shape = self.shape;
        self.n += 1;
        if let Some(first) = trajectory.steps.first() {
            self.initial[first.state] += 1;
        }
        for (h, step) in trajectory.steps.iter().enumerate() {
            let cell = shape.cell(h, step.state, step.action);
            self.visits[cell] += 1;
            self.reward_sums[cell] += step.reward;
            if let Some(next) = step.next_state {
                self.transitions[cell * shape.states + next] += 1;
            }
        }
    }

    pub fn from_trajectories<'a>(shape: Shape, trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut counts = Counts::new(shape);
        for t in trajectories {
            counts.add(t);
        }
        counts
    }

    pub(crate) fn from_raw(
        shape: Shape,
        n: usize,
        visits: Vec<u64>,
        transitions: Vec<u64>,
        reward_sums: Vec<f64>,
        initial: Vec<u64>,
    ) -> Self {
        Counts { shape, n, visits, transitions, reward_sums, initial }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Number of trajectories.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `n_{h,s,a}` laid out like [`Shape::cell`].
    pub fn visits(&self) -> &[u64] {
        &self.visits
    }

    #[inline]
    pub fn visit(&self, h: usize, s: usize, a: usize) -> u64 {
        self.visits[self.shape.cell(h, s, a)]
    }

    /// `n_{h,s,a,s'}` for all `s'`, `h < H - 1`.
    #[inline]
    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> &[u64] {
        let start = self.shape.cell(h, s, a) * self.shape.states;
        &self.transitions[start..start + self.shape.states]
    }

    #[inline]
    pub fn reward_sum(&self, h: usize, s: usize, a: usize) -> f64 {
        self.reward_sums[self.shape.cell(h, s, a)]
    }

    pub fn initial_counts(&self) -> &[u64] {
        &self.initial
    }

    /// Smallest visit count over every `(h, s, a)`.
    pub fn min_visits(&self) -> u64 {
        self.visits.iter().copied().min().unwrap_or(0)
    }
}

/// Trajectories in logging order together with the policy that produced
/// each one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Shape,
    trajectories: Vec<Trajectory>,
    policy_seq: Vec<Policy>,
    counts: Counts,
}

impl Dataset {
    pub fn new(shape: Shape) -> Self {
        Dataset { shape, trajectories: Vec::new(), policy_seq: Vec::new(), counts: Counts::new(shape) }
    }

    /// Rebuilds a dataset, recomputing every count from the trajectories.
    pub fn from_parts(shape: Shape, trajectories: Vec<Trajectory>, policy_seq: Vec<Policy>) -> Result<Self> {
        if trajectories.len() != policy_seq.len() {
            return Err(Error::ShapeMismatch {
                what: "policy sequence",
                expected: trajectories.len(),
                found: policy_seq.len(),
            });
        }
        let mut data = Dataset::new(shape);
        for (t, p) in trajectories.into_iter().zip(policy_seq) {
            data.push(t, p)?;
        }
        Ok(data)
    }

    /// Appends trajectory `tau_i` logged by `mu^i`.
    pub fn push(&mut self, trajectory: Trajectory, policy: Policy) -> Result<()> {
        trajectory.check(self.shape)?;
        if policy.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                what: "logging policy",
                expected: self.shape.cells(),
                found: policy.shape().cells(),
            });
        }
        self.counts.add(&trajectory);
        self.trajectories.push(trajectory);
        self.policy_seq.push(policy);
        Ok(())
    }

    /// The first `n` trajectories, counts recomputed from scratch.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let trajectories = self.trajectories[..n].to_vec();
        let counts = Counts::from_trajectories(self.shape, &trajectories);
        Dataset { shape: self.shape, trajectories, policy_seq: self.policy_seq[..n].to_vec(), counts }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn policy_seq(&self) -> &[Policy] {
        &self.policy_seq
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;

    fn traj(states: &[usize], actions: &[usize]) -> Trajectory {
        let h = states.len();
        Trajectory::new(
            (0..h)
                .map(|i| Step {
                    state: states[i],
                    action: actions[i],
                    reward: 0.5,
                    next_state: (i + 1 < h).then(|| states[i + 1]),
                })
                .collect(),
        )
    }

    #[test]
    fn counts_are_consistent() {
        let shape = Shape::new(2, 2, 3).unwrap();
        let mut data = Dataset::new(shape);
        let pi = Policy::uniform(shape);
        data.push(traj(&[0, 1, 1], &[0, 1, 0]), pi.clone()).unwrap();
        data.push(traj(&[1, 1, 0], &[1, 1, 1]), pi.clone()).unwrap();
        data.push(traj(&[0, 0, 0], &[0, 0, 0]), pi).unwrap();
        let c = data.counts();
        for h in 0..3 {
            let total: u64 = (0..2).flat_map(|s| (0..2).map(move |a| (s, a))).map(|(s, a)| c.visit(h, s, a)).sum();
            assert_eq!(total, 3);
        }
        for h in 0..2 {
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(c.visit(h, s, a), c.transition_row(h, s, a).iter().sum::<u64>());
                }
            }
        }
        assert_eq!(c.transition_row(0, 0, 0), &[1, 1]);
        assert_eq!(c.reward_sum(0, 0, 0), 1.0);
        assert_eq!(c.initial_counts(), &[2, 1]);
        assert_eq!(data.prefix(3).counts(), c);
        assert_eq!(data.prefix(1).counts().n(), 1);
    }

    #[test]
    fn malformed_trajectory_is_rejected() {
        let shape = Shape::new(2, 2, 3).unwrap();
        let mut data = Dataset::new(shape);
        let mut t = traj(&[0, 1, 1], &[0, 1, 0]);
        t.steps[0].next_state = Some(0);
        assert!(data.push(t, Policy::uniform(shape)).is_err());
        assert!(data.push(traj(&[0, 1], &[0, 1]), Policy::uniform(shape)).is_err());
    }
}
