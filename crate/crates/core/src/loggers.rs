//! Logging processes.
//!
//! A [`Logger`] picks `mu^i` from the trajectories logged so far; [`collect`]
//! then rolls `mu^i` out through a [`TapeSet`]. Replaying a recorded policy
//! sequence on fresh tapes gives the shadow dataset.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{log, sqrt};

use crate::dataset::{Counts, Dataset};
use crate::error::{Error, Result};
use crate::instances::{tree_mdp, TreeRewards, LEFT, RIGHT, TREE_LEFT_CHILD};
use crate::mdp::{Policy, Shape, Step, TabularMdp, Trajectory};
use crate::rng::{draw_at, sample_index, stream, unit_f64, StreamKey};
use crate::tape::TapeSet;

/// Declarative description of a logging process.
#[derive(Debug, Clone, PartialEq)]
pub enum LoggerSpec {
    /// Every trajectory uses the same policy.
    Fixed(Policy),
    /// Non-adaptive: trajectory `i` uses `policies[i % len]`.
    Multi(Vec<Policy>),
    /// Optimistic value iteration with a Hoeffding-style bonus.
    UcbVi { bonus_scale: f64, delta: f64 },
    /// The branching adversary for the tree instances.
    AdversarialTree,
}

/// Chooses the next logging policy from the history.
pub trait Logger {
    fn next_policy(&mut self, history: &Dataset) -> Policy;
}

impl LoggerSpec {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        let check = |p: &Policy| {
            if p.shape() == shape {
                Ok(())
            } else {
                Err(Error::ShapeMismatch { what: "logger policy", expected: shape.cells(), found: p.shape().cells() })
            }
        };
        match self {
            LoggerSpec::Fixed(p) => check(p),
            LoggerSpec::Multi(ps) => {
                if ps.is_empty() {
                    return Err(Error::invalid("multi logger needs at least one policy"));
                }
                ps.iter().try_for_each(check)
            }
            LoggerSpec::UcbVi { bonus_scale, delta } => {
                if !(*bonus_scale >= 0.0) || !(*delta > 0.0 && *delta < 1.0) {
                    return Err(Error::invalid(format!(
                        "ucbvi needs bonus_scale >= 0 and delta in (0,1), got {bonus_scale}, {delta}"
                    )));
                }
                Ok(())
            }
            LoggerSpec::AdversarialTree => {
                if shape.actions != 2 || shape.states <= TREE_LEFT_CHILD || shape.horizon < 2 {
                    return Err(Error::invalid("adversarial_tree logger needs a tree-shaped MDP"));
                }
                Ok(())
            }
        }
    }

    /// Instantiates the logger for a run of `n` trajectories.
    pub fn build(&self, shape: Shape, n: usize) -> Result<Box<dyn Logger>> {
        self.validate(shape)?;
        Ok(match self {
            LoggerSpec::Fixed(p) => Box::new(Replay::cycle(vec![p.clone()])),
            LoggerSpec::Multi(ps) => Box::new(Replay::cycle(ps.clone())),
            LoggerSpec::UcbVi { bonus_scale, delta } => {
                Box::new(UcbVi { bonus_scale: *bonus_scale, delta: *delta, n_max: n })
            }
            LoggerSpec::AdversarialTree => Box::new(AdversarialTree {
                all_left: Policy::constant(shape, LEFT)?,
                all_right: Policy::constant(shape, RIGHT)?,
            }),
        })
    }
}

/// Replays a fixed list of policies, cycling when it runs out.
#[derive(Debug, Clone)]
pub struct Replay {
    policies: Vec<Policy>,
}

impl Replay {
    pub fn cycle(policies: Vec<Policy>) -> Self {
        assert!(!policies.is_empty());
        Replay { policies }
    }
}

impl Logger for Replay {
    fn next_policy(&mut self, history: &Dataset) -> Policy {
        self.policies[history.len() % self.policies.len()].clone()
    }
}

#[derive(Debug, Clone)]
struct UcbVi {
    bonus_scale: f64,
    delta: f64,
    n_max: usize,
}

impl Logger for UcbVi {
    fn next_policy(&mut self, history: &Dataset) -> Policy {
        ucbvi_step(history.counts(), self.bonus_scale, self.delta, self.n_max)
    }
}

/// `mu^1` is all-left. If `tau_1` visits the left child of the root, every
/// later policy is all-left; otherwise even-numbered (1-based) trajectories
/// go left and odd ones go right.
#[derive(Debug, Clone)]
struct AdversarialTree {
    all_left: Policy,
    all_right: Policy,
}

impl Logger for AdversarialTree {
    fn next_policy(&mut self, history: &Dataset) -> Policy {
        let Some(first) = history.trajectories().first() else {
            return self.all_left.clone();
        };
        let j = history.len() + 1;
        if visits_left_child(first) || j % 2 == 0 {
            self.all_left.clone()
        } else {
            self.all_right.clone()
        }
    }
}

fn visits_left_child(t: &Trajectory) -> bool {
    t.steps.iter().any(|s| s.state == TREE_LEFT_CHILD)
}

/// Whether an adversarial-tree dataset took the all-left branch.
pub fn took_left_branch(data: &Dataset) -> bool {
    data.trajectories().first().is_some_and(visits_left_child)
}

/// `c * H * sqrt(log(2 S A H n_max / delta) / max(1, n_visits))`.
pub fn ucb_bonus(n_visits: u64, bonus_scale: f64, shape: Shape, n_max: usize, delta: f64) -> f64 {
    let Shape { states, actions, horizon } = shape;
    let log_term = log(2.0 * (states * actions * horizon) as f64 * n_max.max(1) as f64 / delta);
    bonus_scale * horizon as f64 * sqrt(log_term / n_visits.max(1) as f64)
}

/// Greedy policy of optimistic backward induction on the counts so far.
///
/// Rewards are mapped from `[-1, 1]` to `[0, 1]` for the optimism bookkeeping.
/// `Q(h,s,a) = min(H, r + P V(h+1) + bonus)`, and unvisited cells get `H`.
/// Ties go to the less visited action, then the lowest index; with the clip
/// at `H`, plain lowest-index tie-breaking would never leave action 0 while
/// its bonus is large.
pub fn ucbvi_step(counts: &Counts, bonus_scale: f64, delta: f64, n_max: usize) -> Policy {
    let shape = counts.shape();
    let Shape { states, actions, horizon } = shape;
    let cap = horizon as f64;
    let mut next_v = vec![0.0; states];
    let mut choice = vec![0usize; horizon * states];
    for h in (0..horizon).rev() {
        let mut v = vec![0.0; states];
        for s in 0..states {
            let mut best = f64::NEG_INFINITY;
            let mut best_n = u64::MAX;
            for a in 0..actions {
                let n = counts.visit(h, s, a);
                let q = if n == 0 {
                    cap
                } else {
                    let nf = n as f64;
                    let r = 0.5 * (counts.reward_sum(h, s, a) / nf + 1.0);
                    let pv = if h + 1 < horizon {
                        counts.transition_row(h, s, a).iter().zip(&next_v).map(|(&c, &v)| c as f64 / nf * v).sum()
                    } else {
                        0.0
                    };
                    (r + pv + ucb_bonus(n, bonus_scale, shape, n_max, delta)).min(cap)
                };
                if q > best || (q == best && n < best_n) {
                    best = q;
                    best_n = n;
                    choice[shape.state_slot(h, s)] = a;
                }
            }
            v[s] = best;
        }
        next_v = v;
    }
    Policy::from_actions(shape, &choice).expect("actions are in range")
}

/// Runs the logging process for `n` trajectories through a tape machine
/// seeded with `seed`, recording each `mu^i` before `tau_i` is drawn.
pub fn collect(mdp: &TabularMdp, spec: &LoggerSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("collect needs n >= 1"));
    }
    let mut logger = spec.build(mdp.shape(), n)?;
    collect_with(mdp, logger.as_mut(), n, seed)
}

/// [`collect`] with a caller-supplied logger.
pub fn collect_with(mdp: &TabularMdp, logger: &mut dyn Logger, n: usize, seed: u64) -> Result<Dataset> {
    let mut tapes = TapeSet::new(mdp, n, seed);
    let mut data = Dataset::new(mdp.shape());
    for i in 0..n {
        let policy = logger.next_policy(&data);
        let mut actions = stream(seed, StreamKey::action(i));
        let trajectory = tapes.rollout(&policy, &mut actions)?;
        data.push(trajectory, policy)?;
    }
    Ok(data)
}

/// Same process as [`collect`] without tapes: each draw is fetched by
/// seeking the counter-based stream to the per-cell visit index. Under the
/// shared seeding the output is identical to [`collect`].
pub fn collect_direct(mdp: &TabularMdp, spec: &LoggerSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("collect needs n >= 1"));
    }
    let shape = mdp.shape();
    let mut logger = spec.build(shape, n)?;
    let noise = mdp.reward_noise();
    let mut transition_k = vec![0u64; shape.cells()];
    let mut reward_k = vec![0u64; shape.cells()];
    let mut data = Dataset::new(shape);
    for i in 0..n {
        let policy = logger.next_policy(&data);
        let mut steps = Vec::with_capacity(shape.horizon);
        let mut s = sample_index(mdp.initial(), unit_f64(draw_at(seed, StreamKey::initial(), i as u64)));
        for h in 0..shape.horizon {
            let a = policy.sample_action(h, s, unit_f64(draw_at(seed, StreamKey::action(i), h as u64)));
            let cell = shape.cell(h, s, a);
            let mean = mdp.reward(h, s, a);
            let reward = if noise.is_random() {
                noise.realize(mean, unit_f64(draw_at(seed, StreamKey::reward(h, s, a), reward_k[cell])))
            } else {
                mean
            };
            reward_k[cell] += 1;
            let next_state = if h + 1 < shape.horizon {
                let u = unit_f64(draw_at(seed, StreamKey::transition(h, s, a), transition_k[cell]));
                transition_k[cell] += 1;
                Some(sample_index(mdp.transition(h, s, a), u))
            } else {
                None
            };
            steps.push(Step { state: s, action: a, reward, next_state });
            if let Some(sp) = next_state {
                s = sp;
            }
        }
        data.push(Trajectory::new(steps), policy)?;
    }
    Ok(data)
}

/// Rolls out `tau'_i ~ mu^i` for every recorded policy on tapes seeded with
/// `seed`. The shadow never re-decides policies from its own trajectories.
pub fn collect_shadow(mdp: &TabularMdp, policy_seq: &[Policy], seed: u64) -> Result<Dataset> {
    if policy_seq.is_empty() {
        return Err(Error::invalid("shadow collection needs a non-empty policy sequence"));
    }
    for p in policy_seq {
        if p.shape() != mdp.shape() {
            return Err(Error::ShapeMismatch {
                what: "shadow policy",
                expected: mdp.shape().cells(),
                found: p.shape().cells(),
            });
        }
    }
    let mut replay = Replay::cycle(policy_seq.to_vec());
    collect_with(mdp, &mut replay, policy_seq.len(), seed)
}

/// The two tree instances, the always-right target and the adversarial
/// logger used for the lower-bound construction.
#[derive(Debug, Clone)]
pub struct LowerBoundInstances {
    /// All rewards zero.
    pub m1: TabularMdp,
    /// Reward 1 for going right at the second level.
    pub m2: TabularMdp,
    pub target: Policy,
    pub logger: LoggerSpec,
}

pub fn make_lower_bound_instances() -> LowerBoundInstances {
    let m1 = tree_mdp(TreeRewards::Zero);
    let m2 = tree_mdp(TreeRewards::RightPaysAtLevelTwo);
    let target = Policy::constant(m1.shape(), RIGHT).expect("tree has two actions");
    LowerBoundInstances { m1, m2, target, logger: LoggerSpec::AdversarialTree }
}
