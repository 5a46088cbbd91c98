mod common;

use common::checks::{
    bde_matches_sequential, family_sizes, fresh_mass_is_k, prior_normalizes, random_count_rows, rebuild_keeps_ranking,
    repack_reproduces_old,
};
use fmdpu_core::math::lgamma;
use proptest::prelude::*;

fn check(r: Result<(), String>) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bde_matches_sequential_marginal(seed in any::<u64>(), prior in -5.0f64..0.0) {
        check(bde_matches_sequential(&random_count_rows(seed), prior))?;
    }

    #[test]
    fn structure_prior_normalizes(n in 1usize..10, rho in 0.001f64..0.499) {
        check(prior_normalizes(n, rho))?;
    }

    #[test]
    fn family_size_is_binomial_sum(n in 0usize..12, cap in 0usize..8) {
        check(family_sizes(n, cap))?;
    }

    #[test]
    fn rebuild_splits_mass_and_keeps_ranking(seed in any::<u64>(), rho in 0.01f64..0.49, cap in 1usize..5) {
        check(rebuild_keeps_ranking(seed, rho, cap))?;
    }

    #[test]
    fn fresh_variable_mass_is_k(k in 0.1f64..20.0, cz in 2usize..4, cards in prop::collection::vec(2usize..4, 1..4)) {
        check(fresh_mass_is_k(k, &cards, cz))?;
    }

    #[test]
    fn repack_reproduces_old_conditional(seed in any::<u64>(), k in 0.5f64..20.0, ntrials in 0usize..30) {
        check(repack_reproduces_old(seed, k, ntrials))?;
    }
}

#[test]
fn bde_of_a_single_row_by_hand() {
    // three draws then one other under a uniform Beta(1, 1): 1/2 · 2/3 · 3/4 · 1/5
    let rows = vec![(vec![3, 1], vec![1.0, 1.0])];
    assert!(bde_matches_sequential(&rows, 0.0).is_ok());
    let direct = common::checks::sequential_log_marginal(&[3, 1], &[1.0, 1.0]);
    assert!((direct - (1.0f64 / 20.0).ln()).abs() < 1e-12);
}

#[test]
fn lgamma_agrees_with_factorials() {
    let mut f = 1.0f64;
    for n in 1..20 {
        f *= n as f64;
        assert!((lgamma(n as f64 + 1.0) - f.ln()).abs() < 1e-10);
    }
}
