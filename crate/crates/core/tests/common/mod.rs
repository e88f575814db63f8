#![allow(dead_code)]

use aope_core::instances::{random_mdp, random_policy};
use aope_core::mdp::exact_evaluate;
use aope_core::{Counts, Policy, RewardNoise, Shape, TabularMdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The empirical MDP with an extra absorbing, zero-reward sink that takes
/// the mass of every unvisited row. Evaluating it by backward induction is
/// an independent route to the TMIS value.
pub fn empirical_mdp_with_sink(counts: &Counts) -> TabularMdp {
    let shape = counts.shape();
    let (s, a, h) = (shape.states, shape.actions, shape.horizon);
    let sink = s;
    let big = Shape::new(s + 1, a, h).unwrap();
    let mut p = vec![0.0; big.transition_cells() * (s + 1)];
    let mut r = vec![0.0; big.cells()];
    for step in 0..h {
        for state in 0..=s {
            for action in 0..a {
                let dst = big.cell(step, state, action);
                if state < s {
                    let n = counts.visit(step, state, action);
                    if n > 0 {
                        r[dst] = counts.reward_sum(step, state, action) / n as f64;
                    }
                }
                if step + 1 == h {
                    continue;
                }
                let row = &mut p[dst * (s + 1)..(dst + 1) * (s + 1)];
                let n = if state < s { counts.visit(step, state, action) } else { 0 };
                if n == 0 {
                    row[sink] = 1.0;
                } else {
                    for (next, &c) in counts.transition_row(step, state, action).iter().enumerate() {
                        row[next] = c as f64 / n as f64;
                    }
                }
            }
        }
    }
    let total = counts.n() as f64;
    let mut d1: Vec<f64> = counts.initial_counts().iter().map(|&c| c as f64 / total).collect();
    d1.push(0.0);
    TabularMdp::from_parts(big, p, r, d1, RewardNoise::Deterministic).unwrap()
}

/// `pi` on the sink-augmented state space; the sink row is uniform.
pub fn extend_policy(pi: &Policy) -> Policy {
    let shape = pi.shape();
    let big = Shape::new(shape.states + 1, shape.actions, shape.horizon).unwrap();
    let mut probs = Vec::with_capacity(big.cells());
    for h in 0..shape.horizon {
        for s in 0..shape.states {
            probs.extend_from_slice(pi.row(h, s));
        }
        probs.extend(std::iter::repeat_n(1.0 / shape.actions as f64, shape.actions));
    }
    Policy::new(big, probs).unwrap()
}

pub struct Instance {
    pub mdp: TabularMdp,
    pub target: Policy,
    pub logger: Policy,
}

/// Random small instance with `S <= 4`, `A <= 3`, `H <= 5`.
pub fn random_instance(seed: u64, noise: RewardNoise) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=5)).unwrap();
    let mdp = random_mdp(shape, noise, &mut rng);
    let target = random_policy(shape, &mut rng);
    let logger = random_policy(shape, &mut rng);
    Instance { mdp, target, logger }
}

/// Pearson statistic and upper-tail p-value of `observed` against `probs`,
/// dropping zero-probability categories.
pub fn chi_squared(observed: &[u64], probs: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut categories = 0;
    for (&o, &p) in observed.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(o, 0, "observation in a zero-probability category");
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
        categories += 1;
    }
    if categories < 2 {
        return (0.0, 1.0);
    }
    let dist = ChiSquared::new((categories - 1) as f64).unwrap();
    (stat, 1.0 - dist.cdf(stat))
}

/// Exact variance of the return by second-moment backward induction.
pub fn return_variance(mdp: &TabularMdp, pi: &Policy) -> f64 {
    let shape = mdp.shape();
    let t = exact_evaluate(mdp, pi).unwrap();
    let (s_n, a_n, h_n) = (shape.states, shape.actions, shape.horizon);
    let mut second = vec![0.0; s_n];
    for h in (0..h_n).rev() {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let p = pi.prob(h, s, a);
                if p == 0.0 {
                    continue;
                }
                let r = mdp.reward(h, s, a);
                let r2 = r * r + mdp.reward_noise().variance(r);
                let (ev, em) = if h + 1 < h_n {
                    let row = mdp.transition(h, s, a);
                    (
                        row.iter().enumerate().map(|(x, q)| q * t.v(h + 1, x)).sum::<f64>(),
                        row.iter().zip(&second).map(|(q, m)| q * m).sum::<f64>(),
                    )
                } else {
                    (0.0, 0.0)
                };
                next[s] += p * (r2 + 2.0 * r * ev + em);
            }
        }
        second = next;
    }
    let d1 = mdp.initial();
    let m: f64 = d1.iter().zip(&second).map(|(p, m)| p * m).sum();
    let v: f64 = (0..s_n).map(|s| d1[s] * t.v(0, s)).sum();
    m - v * v
}
