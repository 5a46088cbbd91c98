//! Random small factored MDPs for property tests.
#![allow(dead_code)]

pub mod checks;

use fmdpu_core::model::{ActionDecl, VarTable};
use fmdpu_core::{ActionId, Categorical, Fmdp, Predicate, Tree, VarId};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn table(cards: &[usize]) -> VarTable {
    VarTable::new(
        cards
            .iter()
            .enumerate()
            .map(|(i, &c)| (format!("V{i}"), (0..c).map(|k| format!("v{k}")).collect()))
            .collect(),
    )
}

pub fn random_dist(card: usize, rng: &mut TestRng) -> Categorical {
    if rng.gen_bool(0.25) {
        return Categorical::point(card, rng.gen_range(0..card) as u8);
    }
    positive_dist(card, rng)
}

/// Random distribution with every entry bounded away from zero, like learned expected parameters.
pub fn positive_dist(card: usize, rng: &mut TestRng) -> Categorical {
    let w: Vec<f64> = (0..card).map(|_| rng.gen_range(0.05..1.0)).collect();
    let z: f64 = w.iter().sum();
    Categorical(w.into_iter().map(|x| x / z).collect())
}

/// Random tree of bounded depth; tests may repeat or contradict each other.
pub fn random_tree<L>(cards: &[usize], depth: usize, rng: &mut TestRng, leaf: &mut impl FnMut(&mut TestRng) -> L) -> Tree<L> {
    if depth == 0 || rng.gen_bool(0.3) {
        return Tree::Leaf(leaf(rng));
    }
    let v = rng.gen_range(0..cards.len());
    let x = rng.gen_range(0..cards[v]) as u8;
    let pass = random_tree(cards, depth - 1, rng, leaf);
    let fail = random_tree(cards, depth - 1, rng, leaf);
    Tree::test(VarId(v as u8), x, pass, fail)
}

/// Random FMDP with 2–4 variables of 2–3 values and 1–3 actions.
/// With `terminal` the first variable at value 1 ends the episode.
pub fn random_fmdp(seed: u64, terminal: bool) -> Fmdp {
    let mut r = rng(seed);
    let n = r.gen_range(2..=4);
    let cards: Vec<usize> = (0..n).map(|_| r.gen_range(2..=3)).collect();
    let na = r.gen_range(1..=3);
    let vars = table(&cards);
    let actions = (0..na).map(|a| ActionDecl { id: ActionId(a as u8), name: format!("A{a}") }).collect();
    let cpds = (0..na)
        .map(|_| {
            (0..n)
                .map(|x| random_tree(&cards, 3, &mut r, &mut |r: &mut TestRng| random_dist(cards[x], r)).reduce(&cards))
                .collect()
        })
        .collect();
    let reward = random_tree(&cards, 3, &mut r, &mut |r: &mut TestRng| (r.gen_range(0..20) as f64) / 10.0).reduce(&cards);
    let (terminal, start) = if terminal {
        let t = Predicate::Atom(VarId(0), 1);
        (t.clone(), Predicate::Not(Box::new(t)))
    } else {
        (Predicate::Not(Box::new(Predicate::True)), Predicate::True)
    };
    let discount = [0.5, 0.8, 0.9][r.gen_range(0..3)];
    let m = Fmdp { vars, actions, cpds, reward, terminal, start, discount };
    m.validate().expect("generated model is valid");
    m
}

/// Every complete state of `cards`, first variable slowest.
pub fn states(cards: &[usize]) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..c as u8).map(move |v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}
