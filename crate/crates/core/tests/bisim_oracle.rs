mod common;

use common::{dense_bisim_oracle, oracle_greedy, oracle_q, random_mdp};
use extra_core::bisim::{lax_bisim_metric, lax_bisim_metric_traced, state_metric, BisimConfig, MetricVariant};
use extra_core::envs::rng_stream;
use proptest::prelude::*;

fn pair(seed: u64, max_states: usize) -> (extra_core::Mdp, extra_core::mdp::DeterministicPolicy, extra_core::Mdp) {
    let mut rng = rng_stream(seed, 7);
    use rand::Rng;
    let (ns1, na1) = (rng.random_range(1..=max_states), rng.random_range(1..=3));
    let (ns2, na2) = (rng.random_range(1..=max_states), rng.random_range(1..=3));
    let source = random_mdp(&mut rng, ns1, na1, 0.9);
    let target = random_mdp(&mut rng, ns2, na2, 0.9);
    let policy = oracle_greedy(&oracle_q(&source, 1e-12));
    (source, policy, target)
}

#[test]
fn four_by_five_pair_matches_dense_oracle() {
    let mut rng = rng_stream(11, 0);
    let source = random_mdp(&mut rng, 4, 2, 0.9);
    let target = random_mdp(&mut rng, 5, 2, 0.9);
    let policy = oracle_greedy(&oracle_q(&source, 1e-12));
    let cfg = BisimConfig { threshold: 1e-9, max_iterations: 1000, ..BisimConfig::tuned(0.1) };
    let got = lax_bisim_metric(&source, &policy, &target, &cfg).unwrap();
    assert!(got.converged);
    let want = dense_bisim_oracle(&source, &policy, &target, 0.1, 0.9, MetricVariant::Optimistic, 1e-9, 1000);
    for s1 in 0..4 {
        for s2 in 0..5 {
            for a2 in 0..2 {
                assert!((got.get(s1, s2, a2) - want[s1][s2][a2]).abs() < 1e-7);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterates_are_monotone_and_contracting(seed in any::<u64>(), pessimistic in any::<bool>()) {
        let (source, policy, target) = pair(seed, 6);
        let variant = if pessimistic { MetricVariant::Pessimistic } else { MetricVariant::Optimistic };
        let cfg = BisimConfig { threshold: 1e-9, max_iterations: 400, ..BisimConfig::tuned(0.3) }.with_variant(variant);
        let mut prev: Option<Vec<f64>> = None;
        let mut changes = Vec::new();
        let metric = lax_bisim_metric_traced(&source, &policy, &target, &cfg, |_, m| {
            if let Some(p) = &prev {
                assert!(m.values().iter().zip(p).all(|(a, b)| *a >= b - 1e-12), "iterates decreased");
            }
            changes.push(m.sup_change_last);
            prev = Some(m.values().to_vec());
        })
        .unwrap();
        for w in changes.windows(2) {
            prop_assert!(w[1] <= 0.9 * w[0] + 1e-9);
        }
        let (lo1, hi1) = source.reward_span();
        let (lo2, hi2) = target.reward_span();
        let bound = 0.3 * (hi1.max(hi2) - lo1.min(lo2)) / (1.0 - 0.9);
        prop_assert!(metric.values().iter().all(|&d| (0.0..=bound + 1e-9).contains(&d)));
        let opt = state_metric(&metric, MetricVariant::Optimistic);
        let pes = state_metric(&metric, MetricVariant::Pessimistic);
        prop_assert!(opt.values().iter().zip(pes.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn identical_mdps_have_zero_self_distance(seed in any::<u64>()) {
        let (source, policy, _) = pair(seed, 6);
        let cfg = BisimConfig { threshold: 1e-10, max_iterations: 2000, ..BisimConfig::tuned(0.1) };
        let metric = lax_bisim_metric(&source, &policy, &source, &cfg).unwrap();
        for s in 0..source.num_states() {
            prop_assert!(metric.get(s, s, policy.action(s)) < 1e-8);
        }
    }
}
