mod common;

use datamarket::game::{best_response, platform_payoff, user_payoff};
use datamarket::welfare::first_best;
use datamarket::{
    enumerate_user_equilibria, greatest_user_equilibrium, is_user_equilibrium, least_user_equilibrium,
    stackelberg_equilibrium, supporting_prices, ActionProfile, BlockPartition, GaussianMarket, KnownValueInstance,
    PriceVector, SolverOptions,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn instance(max_n: usize, v_max: f64) -> impl Strategy<Value = KnownValueInstance> {
    any::<u64>().prop_map(move |seed| common::random_known(&mut common::rng(seed), max_n, v_max))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stackelberg_beats_every_supported_profile(inst in instance(5, 3.0)) {
        let report = stackelberg_equilibrium(&inst, &SolverOptions::exhaustive()).unwrap();
        let chosen = report.outcome.platform_payoff;
        for a in ActionProfile::all(inst.n()) {
            let p = supporting_prices(&inst, a).unwrap();
            prop_assert!(is_user_equilibrium(&inst, &p, a).unwrap());
            prop_assert!(platform_payoff(&inst, a, &p).unwrap() <= chosen + 1e-9);
        }
        prop_assert!(report.outcome.prices.as_slice().iter().all(|&p| p >= 0.0));
        prop_assert!(chosen >= -1e-12, "autarky pays zero, so the optimum cannot be negative");
    }

    #[test]
    fn equilibria_form_a_lattice(inst in instance(5, 2.0), level in 0.0..1.5f64) {
        let p = PriceVector::uniform(inst.n(), level).unwrap();
        let lo = least_user_equilibrium(&inst, &p).unwrap();
        let hi = greatest_user_equilibrium(&inst, &p).unwrap();
        let all = enumerate_user_equilibria(&inst, &p).unwrap();
        prop_assert!(all.contains(&lo) && all.contains(&hi));
        for a in &all {
            prop_assert!(lo.is_below(a) && a.is_below(&hi), "{lo} <= {a} <= {hi}");
        }
    }

    #[test]
    fn sharing_is_a_strategic_complement(inst in instance(5, 2.0), price in 0.0..1.0f64, m1 in any::<u64>(), m2 in any::<u64>()) {
        let n = inst.n();
        let full = (1u64 << n) - 1;
        let lower = ActionProfile::from_mask(n, m1 & m2 & full);
        let upper = ActionProfile::from_mask(n, (m1 | m2) & full);
        for i in 0..n {
            if best_response(&inst, lower, price, i).unwrap() {
                prop_assert!(best_response(&inst, upper, price, i).unwrap());
            }
        }
    }

    #[test]
    fn payoffs_add_up_to_surplus(inst in instance(5, 3.0)) {
        let report = stackelberg_equilibrium(&inst, &SolverOptions::exhaustive()).unwrap();
        let out = &report.outcome;
        let users: f64 = (0..inst.n()).map(|i| user_payoff(&inst, out.profile, &out.prices, i).unwrap()).sum();
        prop_assert!((out.platform_payoff + users - out.social_surplus).abs() < 1e-10);
        // Sharers are held to indifference.
        for i in out.profile.sharers() {
            let unshared = user_payoff(&inst, out.profile.with(i, false), &out.prices, i).unwrap();
            prop_assert!((out.user_payoffs[i] - unshared).abs() < 1e-10);
        }
    }
}

/// Two exchangeable blocks with random sizes, variances and correlations.
fn block_instance() -> impl Strategy<Value = (KnownValueInstance, BlockPartition)> {
    (1usize..=4, 1usize..=4, 0.3..2.0f64, 0.3..2.0f64, 0.0..0.6f64, 0.0..0.6f64, 0.0..0.3f64, 0.0..2.5f64, 0.0..2.5f64)
        .prop_filter_map("positive semidefinite", |(k1, k2, s1, s2, w1, w2, c, v1, v2)| {
            let n = k1 + k2;
            let var = |i: usize| if i < k1 { s1 } else { s2 };
            let sigma = DMatrix::from_fn(n, n, |i, j| {
                let corr = match (i == j, i < k1, j < k1) {
                    (true, _, _) => 1.0,
                    (false, true, true) => w1,
                    (false, false, false) => w2,
                    _ => c,
                };
                corr * (var(i) * var(j)).sqrt()
            });
            let market = GaussianMarket::new(sigma).ok()?;
            let values = (0..n).map(|i| if i < k1 { v1 } else { v2 }).collect();
            Some((KnownValueInstance::new(market, values).unwrap(), BlockPartition::new(vec![k1, k2]).unwrap()))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn block_reduction_agrees_with_enumeration((inst, blocks) in block_instance()) {
        let full = stackelberg_equilibrium(&inst, &SolverOptions::exhaustive()).unwrap();
        let reduced = stackelberg_equilibrium(&inst, &SolverOptions::with_blocks(blocks.clone())).unwrap();
        prop_assert!((full.outcome.platform_payoff - reduced.outcome.platform_payoff).abs() < 1e-10);
        prop_assert_eq!(full.search.tie_multiplicity, reduced.search.tie_multiplicity);
        let fb_full = first_best(&inst, &SolverOptions::exhaustive()).unwrap();
        let fb_reduced = first_best(&inst, &SolverOptions::with_blocks(blocks)).unwrap();
        prop_assert!((fb_full.surplus - fb_reduced.surplus).abs() < 1e-10);
    }
}

#[test]
fn block_mode_rejects_unequal_values_within_a_block() {
    let market = GaussianMarket::equicorrelated(4, 0.2).unwrap();
    let inst = KnownValueInstance::new(market, vec![0.5, 0.6, 0.5, 0.5]).unwrap();
    let blocks = BlockPartition::new(vec![2, 2]).unwrap();
    assert!(stackelberg_equilibrium(&inst, &SolverOptions::with_blocks(blocks)).is_err());
}

#[test]
fn pair_has_both_corner_equilibria_inside_the_interval() {
    for k in 1..=9 {
        let rho = k as f64 / 10.0;
        let inst = KnownValueInstance::new(GaussianMarket::equicorrelated(2, rho).unwrap(), vec![1.0, 1.0]).unwrap();
        let r2 = rho * rho;
        let lo = (2.0 - r2).powi(2) / (2.0 * (4.0 - r2));
        let below = PriceVector::uniform(2, lo * 0.99).unwrap();
        let above = PriceVector::uniform(2, 0.5 + 1e-6).unwrap();
        assert_eq!(enumerate_user_equilibria(&inst, &below).unwrap(), vec!["00".parse().unwrap()]);
        assert_eq!(enumerate_user_equilibria(&inst, &above).unwrap(), vec!["11".parse().unwrap()]);
    }
}
