mod common;

use aope_core::bounds::{nope_mse_bound_t6, pointwise_bound_t3, uniform_bound_t1, worst_case_c2, worst_case_c4};
use aope_core::loggers::{collect, collect_direct, collect_shadow};
use aope_core::mdp::{exact_evaluate, transition_variance};
use aope_core::tmis::{build_empirical_model, discard_to_iid, tmis_value};
use aope_core::{Counts, LoggerSpec, MinOver, Policy, RewardNoise, Shape};
use common::{empirical_mdp_with_sink, extend_policy, random_instance, return_variance};
use proptest::prelude::*;

fn noise_strategy() -> impl Strategy<Value = RewardNoise> {
    prop_oneof![Just(RewardNoise::Deterministic), Just(RewardNoise::TwoPoint)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tmis_equals_sink_augmented_evaluation(seed in any::<u64>(), n in 1usize..120, noise in noise_strategy()) {
        let inst = random_instance(seed, noise);
        let data = collect(&inst.mdp, &LoggerSpec::Fixed(inst.logger.clone()), n, seed ^ 1).unwrap();
        let model = build_empirical_model(data.counts(), None).unwrap();
        let est = tmis_value(&model, &inst.target).unwrap();
        let oracle = empirical_mdp_with_sink(data.counts());
        let v = exact_evaluate(&oracle, &extend_policy(&inst.target)).unwrap();
        let expect: f64 = oracle.initial().iter().enumerate().map(|(s, p)| p * v.v(0, s)).sum();
        prop_assert!((est.value - expect).abs() <= 1e-10, "{} vs {}", est.value, expect);
    }

    #[test]
    fn tmis_on_infinite_data_is_the_truth(seed in any::<u64>()) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let data = collect(&inst.mdp, &LoggerSpec::Fixed(inst.logger.clone()), 20_000, seed).unwrap();
        let est = tmis_value(&build_empirical_model(data.counts(), Some(&inst.mdp)).unwrap(), &inst.target).unwrap();
        let v = exact_evaluate(&inst.mdp, &inst.target).unwrap();
        let truth: f64 = inst.mdp.initial().iter().enumerate().map(|(s, p)| p * v.v(0, s)).sum();
        // Crude consistency: the error is O(H / sqrt(n d_m)).
        let h = inst.mdp.horizon() as f64;
        prop_assert!((est.value - truth).abs() < 0.5 * h, "{} vs {}", est.value, truth);
    }

    #[test]
    fn occupancies_are_distributions(seed in any::<u64>()) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let t = exact_evaluate(&inst.mdp, &inst.target).unwrap();
        let shape = inst.mdp.shape();
        for h in 0..shape.horizon {
            let total: f64 = (0..shape.states).flat_map(|s| (0..shape.actions).map(move |a| (s, a)))
                .map(|(s, a)| t.occupancy(h, s, a)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        for v in t.values() {
            prop_assert!(v.abs() <= shape.horizon as f64 + 1e-12);
        }
    }

    #[test]
    fn law_of_total_variance(seed in any::<u64>()) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let shape = inst.mdp.shape();
        let t = exact_evaluate(&inst.mdp, &inst.target).unwrap();
        let var = transition_variance(&inst.mdp, &inst.target).unwrap();
        let step_sum: f64 = t.occupancies().iter().zip(&var).map(|(d, v)| d * v).sum();
        let d1 = inst.mdp.initial();
        let v0: f64 = (0..shape.states).map(|s| d1[s] * t.v(0, s)).sum();
        let initial_var: f64 = (0..shape.states).map(|s| d1[s] * (t.v(0, s) - v0).powi(2)).sum();
        // A stochastic target adds the spread of Q over its own actions.
        let action_var: f64 = (0..shape.horizon)
            .flat_map(|h| (0..shape.states).map(move |s| (h, s)))
            .map(|(h, s)| {
                let spread: f64 = (0..shape.actions)
                    .map(|a| inst.target.prob(h, s, a) * (t.q(h, s, a) - t.v(h, s)).powi(2))
                    .sum();
                t.state_occupancy(h, s) * spread
            })
            .sum();
        let h = shape.horizon as f64;
        prop_assert!(step_sum <= h * h + 1e-10);
        prop_assert!((step_sum + initial_var + action_var - return_variance(&inst.mdp, &inst.target)).abs() < 1e-10);
    }

    #[test]
    fn tape_and_direct_routes_agree(seed in any::<u64>(), n in 1usize..60, noise in noise_strategy(), ucb in any::<bool>()) {
        let inst = random_instance(seed, noise);
        let spec = if ucb {
            LoggerSpec::UcbVi { bonus_scale: 1.0, delta: 0.1 }
        } else {
            LoggerSpec::Multi(vec![inst.logger.clone(), inst.target.clone()])
        };
        let a = collect(&inst.mdp, &spec, n, seed).unwrap();
        let b = collect_direct(&inst.mdp, &spec, n, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn counts_are_conserved(seed in any::<u64>(), n in 1usize..80) {
        let inst = random_instance(seed, RewardNoise::TwoPoint);
        let data = collect(&inst.mdp, &LoggerSpec::UcbVi { bonus_scale: 0.5, delta: 0.1 }, n, seed).unwrap();
        let shape = inst.mdp.shape();
        let c = data.counts();
        prop_assert_eq!(c.initial_counts().iter().sum::<u64>(), n as u64);
        for h in 0..shape.horizon {
            let layer: u64 = c.visits()[shape.cell(h, 0, 0)..shape.cell(h, 0, 0) + shape.states * shape.actions].iter().sum();
            prop_assert_eq!(layer, n as u64);
        }
        for cell in 0..shape.transition_cells() {
            let (h, s, a) = shape.unravel(cell);
            prop_assert_eq!(c.transition_row(h, s, a).iter().sum::<u64>(), c.visits()[cell]);
        }
    }

    #[test]
    fn prefix_estimates_match_incremental_counts(seed in any::<u64>(), n in 1usize..60) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let data = collect(&inst.mdp, &LoggerSpec::UcbVi { bonus_scale: 1.0, delta: 0.1 }, n, seed).unwrap();
        let mut running = Counts::new(inst.mdp.shape());
        for (k, t) in data.trajectories().iter().enumerate() {
            running.add(t);
            let scratch = data.prefix(k + 1);
            prop_assert_eq!(scratch.counts(), &running);
            let a = tmis_value(&build_empirical_model(&running, None).unwrap(), &inst.target).unwrap().value;
            let b = tmis_value(&build_empirical_model(scratch.counts(), None).unwrap(), &inst.target).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn discard_equalizes_visited_transition_cells(seed in any::<u64>(), n in 1usize..80) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let data = collect(&inst.mdp, &LoggerSpec::UcbVi { bonus_scale: 1.0, delta: 0.1 }, n, seed).unwrap();
        let shape = inst.mdp.shape();
        let (kept, keep) = discard_to_iid(&data, MinOver::VisitedCells);
        for cell in 0..shape.transition_cells() {
            let original = data.counts().visits()[cell];
            let reduced = kept.visits()[cell];
            if original > 0 {
                prop_assert_eq!(reduced, keep);
            } else {
                prop_assert_eq!(reduced, 0);
            }
            let (h, s, a) = shape.unravel(cell);
            prop_assert_eq!(kept.transition_row(h, s, a).iter().sum::<u64>(), reduced);
        }
        for cell in shape.transition_cells()..shape.cells() {
            prop_assert!(kept.visits()[cell] <= keep.min(data.counts().visits()[cell]));
        }
    }

    #[test]
    fn shadow_of_recorded_sequence_has_same_policies(seed in any::<u64>(), n in 1usize..40) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let data = collect(&inst.mdp, &LoggerSpec::UcbVi { bonus_scale: 1.0, delta: 0.1 }, n, seed).unwrap();
        let shadow = collect_shadow(&inst.mdp, data.policy_seq(), seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(shadow.policy_seq(), data.policy_seq());
        prop_assert_eq!(shadow.len(), n);
    }

    #[test]
    fn bounds_never_increase_with_more_data(seed in any::<u64>(), bump_cell in any::<prop::sample::Index>(), extra in 1u64..50) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let shape = inst.mdp.shape();
        let n = 200usize;
        let d = 0.05;
        let base: Vec<u64> = (0..shape.cells() as u64).map(|c| 10 + (c * 7) % 13).collect();
        let mut bumped = base.clone();
        bumped[bump_cell.index(shape.cells())] += extra;
        let t1a = uniform_bound_t1(&inst.mdp, &inst.target, &base, n, 0.1).unwrap();
        let t1b = uniform_bound_t1(&inst.mdp, &inst.target, &bumped, n, 0.1).unwrap();
        prop_assert!(t1b.total <= t1a.total);
        let t3a = pointwise_bound_t3(&inst.mdp, &inst.target, &base, n, 0.1, d).unwrap();
        let t3b = pointwise_bound_t3(&inst.mdp, &inst.target, &bumped, n, 0.1, d).unwrap();
        prop_assert!(t3b.total <= t3a.total);
        prop_assert!((t3a.total - t3a.per_cell.iter().sum::<f64>() - t3a.residual_term).abs() <= 1e-12 * t3a.total.max(1.0));

        // Growing n with the counts scaled along.
        let scaled: Vec<u64> = base.iter().map(|c| c * 4).collect();
        let t1c = uniform_bound_t1(&inst.mdp, &inst.target, &scaled, 4 * n, 0.1).unwrap();
        let t3c = pointwise_bound_t3(&inst.mdp, &inst.target, &scaled, 4 * n, 0.1, d).unwrap();
        prop_assert!(t1c.total <= t1a.total);
        prop_assert!(t3c.total <= t3a.total);
        prop_assert!(worst_case_c2(shape, 4 * n, 0.1, d).unwrap() <= worst_case_c2(shape, n, 0.1, d).unwrap());
        prop_assert!(worst_case_c4(shape, 4 * n, 0.1, d).unwrap() <= worst_case_c4(shape, n, 0.1, d).unwrap());

        let seq = vec![inst.logger.clone(); n];
        let seq4 = vec![inst.logger.clone(); 4 * n];
        let t6a = nope_mse_bound_t6(&inst.mdp, &inst.target, &seq, n).unwrap();
        let t6b = nope_mse_bound_t6(&inst.mdp, &inst.target, &seq4, 4 * n).unwrap();
        prop_assert!(t6b.total <= t6a.total);
    }

    #[test]
    fn c2_dominates_t1_at_equal_counts(seed in any::<u64>(), n in 10usize..5000, d in 0.01f64..1.0) {
        let inst = random_instance(seed, RewardNoise::Deterministic);
        let shape = inst.mdp.shape();
        let count = ((n as f64 * d).ceil() as u64).max(1);
        let visits = vec![count; shape.cells()];
        let t1 = uniform_bound_t1(&inst.mdp, &inst.target, &visits, n, 0.1).unwrap();
        prop_assert!(t1.total <= worst_case_c2(shape, n, 0.1, d).unwrap() * (1.0 + 1e-12));
    }
}

#[test]
fn single_state_single_action_has_no_uncertainty() {
    let shape = Shape::new(1, 1, 4).unwrap();
    let mdp =
        aope_core::TabularMdp::new(shape, vec![1.0; 3], vec![0.25; 4], vec![1.0], RewardNoise::Deterministic).unwrap();
    let pi = Policy::uniform(shape);
    let data = collect(&mdp, &LoggerSpec::Fixed(pi.clone()), 3, 7).unwrap();
    let est = tmis_value(&build_empirical_model(data.counts(), None).unwrap(), &pi).unwrap();
    assert_eq!(est.value, 1.0);
    let r = pointwise_bound_t3(&mdp, &pi, data.counts().visits(), 3, 0.1, 1.0).unwrap();
    assert_eq!(r.dominant_term, 0.0);
}
