mod common;

use std::sync::Arc;

use common::checks::{advice_truthful_and_spaced, discovery_keeps_values, reward_tree_fits_visits, run, simulation};
use common::random_fmdp;
use fmdpu_core::Variant;

#[test]
fn advice_is_truthful_and_spaced() {
    let mut total = 0;
    for seed in 0..12u64 {
        total += advice_truthful_and_spaced(seed).unwrap();
    }
    assert!(total > 0, "no advice was given in any run");
}

#[test]
fn awareness_only_grows_and_models_stay_within_it() {
    let mut grew = 0;
    for seed in 0..8u64 {
        let m = Arc::new(random_fmdp(100 + seed, true));
        for variant in [Variant::Default, Variant::NonConservative] {
            let mut sim = simulation(&m, seed, variant, 0.05);
            let mut prev = sim.agent().awareness().clone();
            for _ in 0..300 {
                sim.step().unwrap();
                let aw = sim.agent().awareness().clone();
                assert!(prev.variables.is_subset(aw.variables));
                assert!(prev.actions.iter().all(|a| aw.actions.contains(a)));
                assert!(prev.reward_scope.is_subset(aw.reward_scope));
                assert!(aw.is_valid(m.num_vars(), m.num_actions()));
                assert!(sim.agent().references_only_aware());
                prev = aw;
            }
            grew += (prev.variables.len() > 1 && prev.actions.len() > 1) as usize;
        }
    }
    assert!(grew > 0, "no run extended its awareness");
}

#[test]
fn discovery_leaves_values_untouched() {
    let checked: usize = (0..8u64).map(|seed| discovery_keeps_values(seed).unwrap()).sum();
    assert!(checked > 0);
}

#[test]
fn reward_tree_agrees_with_every_visited_successor() {
    for seed in 0..10u64 {
        reward_tree_fits_visits(seed).unwrap();
    }
}

#[test]
fn fixed_policies_do_not_learn() {
    let m = Arc::new(random_fmdp(7, true));
    for variant in [Variant::TruePolicy, Variant::Random] {
        let mut sim = simulation(&m, 1, variant, 0.05);
        let rows = run(&mut sim, 200);
        assert!(rows.iter().all(|r| r.advice.is_none() && r.advice_count == 0 && r.query_count == 0));
        let vars = rows.last().unwrap().vars_aware;
        assert_eq!(vars, if variant == Variant::TruePolicy { m.num_vars() } else { 1 });
    }
}

#[test]
fn replicas_are_deterministic() {
    let m = Arc::new(random_fmdp(9, true));
    let a = run(&mut simulation(&m, 4, Variant::Default, 0.05), 250);
    let b = run(&mut simulation(&m, 4, Variant::Default, 0.05), 250);
    assert_eq!(a, b);
}
