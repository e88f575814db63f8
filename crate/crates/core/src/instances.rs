//! Built-in MDP instances and random generators.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::mdp::{Policy, RewardNoise, Shape, TabularMdp};

/// Generation seed of the shared `toy2x2` instance.
pub const TOY_SEED: u64 = 20230501;

/// Action indices of the tree instances.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// State index of the left child of the root ("state 2" in the usual
/// 1-based drawing of the tree).
pub const TREE_LEFT_CHILD: usize = 1;

/// Draws from the flat Dirichlet on the `len`-simplex.
pub fn flat_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    // Exact renormalization keeps the row sum within 1e-12 after division.
    let drift = 1.0 - w.iter().sum::<f64>();
    if let Some(max) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += drift;
    }
    w
}

/// Random MDP: transition rows and `d1` from the flat simplex, mean rewards
/// uniform on `[-1, 1]`.
pub fn random_mdp<R: Rng + ?Sized>(shape: Shape, noise: RewardNoise, rng: &mut R) -> TabularMdp {
    let mut transitions = Vec::with_capacity(shape.transition_cells() * shape.states);
    for _ in 0..shape.transition_cells() {
        transitions.extend(flat_simplex(shape.states, rng));
    }
    let rewards = (0..shape.cells()).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let initial = flat_simplex(shape.states, rng);
    TabularMdp::new(shape, transitions, rewards, initial, noise).expect("generated MDP is valid")
}

/// Random stochastic policy with rows from the flat simplex.
pub fn random_policy<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Policy {
    let probs = (0..shape.horizon * shape.states).flat_map(|_| flat_simplex(shape.actions, rng)).collect();
    Policy::new(shape, probs).expect("generated policy is valid")
}

/// The shared 2-state, 2-action, `H = 5` non-stationary toy instance.
pub fn toy2x2() -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(TOY_SEED);
    random_mdp(Shape { states: 2, actions: 2, horizon: 5 }, RewardNoise::Deterministic, &mut rng)
}

/// Reward tables of the two tree instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeRewards {
    /// All rewards zero.
    Zero,
    /// Reward 1 for the right action at the second level, zero elsewhere.
    RightPaysAtLevelTwo,
}

/// Depth-3 binary tree: the root splits 50/50 to states 1 and 2 regardless of
/// the action, then each moves deterministically to its left (action 0) or
/// right (action 1) leaf. States 3..=6 are the leaves. Unreachable cells
/// self-loop.
pub fn tree_mdp(rewards: TreeRewards) -> TabularMdp {
    let shape = Shape { states: 7, actions: 2, horizon: 3 };
    let s_count = shape.states;
    let mut p = vec![0.0; shape.transition_cells() * s_count];
    let mut set = |h: usize, s: usize, a: usize, next: usize, prob: f64| {
        p[shape.cell(h, s, a) * s_count + next] = prob;
    };
    for h in 0..2 {
        for s in 0..s_count {
            for a in 0..2 {
                match (h, s) {
                    (0, 0) => {
                        set(h, s, a, 1, 0.5);
                        set(h, s, a, 2, 0.5);
                    }
                    (1, 1) | (1, 2) => set(h, s, a, 3 + 2 * (s - 1) + a, 1.0),
                    _ => set(h, s, a, s, 1.0),
                }
            }
        }
    }
    let mut r = vec![0.0; shape.cells()];
    if rewards == TreeRewards::RightPaysAtLevelTwo {
        r[shape.cell(1, 1, RIGHT)] = 1.0;
        r[shape.cell(1, 2, RIGHT)] = 1.0;
    }
    let mut d1 = vec![0.0; s_count];
    d1[0] = 1.0;
    TabularMdp::new(shape, p, r, d1, RewardNoise::Deterministic).expect("tree MDP is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_is_fixed() {
        assert_eq!(toy2x2(), toy2x2());
        let toy = toy2x2();
        assert_eq!((toy.states(), toy.actions(), toy.horizon()), (2, 2, 5));
        assert!(toy.validate().is_empty());
    }

    #[test]
    fn simplex_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for len in 1..6 {
            let w = flat_simplex(len, &mut rng);
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn tree_instances_validate() {
        assert!(tree_mdp(TreeRewards::Zero).validate().is_empty());
        assert!(tree_mdp(TreeRewards::RightPaysAtLevelTwo).validate().is_empty());
    }
}
