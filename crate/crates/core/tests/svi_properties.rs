mod common;

use common::checks::{flat_gap, solve};
use common::{random_fmdp, states};
use fmdpu_core::svi::{greedy_policy, inc_svi, ActionModel, PlanningProblem};
use fmdpu_core::{ActionId, Fmdp, PartialState, Tree};
use proptest::prelude::*;

fn complete_states(m: &Fmdp) -> Vec<PartialState> {
    states(&m.vars.cards()).iter().map(|s| PartialState::complete(s)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn structured_matches_flat(seed in any::<u64>(), terminal in any::<bool>()) {
        let m = random_fmdp(seed, terminal);
        let gap = flat_gap(&m);
        prop_assert!(gap < 1e-5, "structured and flat values differ by {}", gap);
    }

    #[test]
    fn backups_contract(seed in any::<u64>(), terminal in any::<bool>()) {
        let m = random_fmdp(seed, terminal);
        let cards = m.vars.cards();
        let dbns: Vec<ActionModel> = m.action_ids().map(|a| ActionModel::from_fmdp(&m, a)).collect();
        let actions: Vec<(ActionId, &ActionModel)> = m.action_ids().zip(dbns.iter()).collect();
        let term = m.terminal_tree();
        let p = PlanningProblem { cards: &cards, reward: &m.reward, terminal: &term, actions: &actions, discount: m.discount };
        let all = complete_states(&m);
        let dist = |a: &Tree<f64>, b: &Tree<f64>| all.iter().map(|s| (a.eval(s) - b.eval(s)).abs()).fold(0.0, f64::max);
        let mut prev = Tree::Leaf(0.0);
        let mut cur = inc_svi(&p, &prev).unwrap().v;
        for _ in 0..30 {
            let next = inc_svi(&p, &cur).unwrap();
            prop_assert!(dist(&next.v, &cur) <= m.discount * dist(&cur, &prev) + 1e-9);
            prop_assert!(next.v.is_path_consistent(&cards));
            prop_assert_eq!(&next.v.reduce(&cards), &next.v);
            for (_, q) in &next.q {
                prop_assert!(q.is_path_consistent(&cards));
                prop_assert_eq!(&q.reduce(&cards), q);
            }
            prev = cur;
            cur = next.v;
        }
    }

    #[test]
    fn greedy_policy_survives_positive_scaling(seed in any::<u64>(), terminal in any::<bool>(), c in 0.1f64..10.0, d in -5.0f64..5.0) {
        let m = random_fmdp(seed, terminal);
        let cards = m.vars.cards();
        // an offset shifts terminal and non-terminal values differently, so it is only applied without terminals
        let d = if terminal { 0.0 } else { d };
        let scaled = m.reward.map(&mut |r: &f64| c * r + d);
        let base = solve(&m, &m.reward);
        let other = solve(&m, &scaled);
        let pa = greedy_policy(&base.q, &cards).unwrap();
        let pb = greedy_policy(&other.q, &cards).unwrap();
        for s in complete_states(&m) {
            let qs: Vec<f64> = base.q.iter().map(|(_, t)| *t.eval(&s)).collect();
            let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let clear = qs.iter().filter(|&&q| best - q < 1e-6).count() == 1;
            if clear {
                prop_assert_eq!(pa.eval(&s), pb.eval(&s));
            }
        }
    }
}
