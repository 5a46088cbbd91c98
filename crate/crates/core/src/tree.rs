//! Binary decision trees over partial states and their algebra.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::model::{ActionId, Context, PartialState, VarId, VarSet, VarTable};

/// Tolerance used when comparing numeric leaves.
pub const LEAF_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Tree<L> {
    Leaf(L),
    Test(Box<TestNode<L>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestNode<L> {
    pub var: VarId,
    pub value: u8,
    pub pass: Tree<L>,
    pub fail: Tree<L>,
}

/// Leaf payloads that can be compared for reduction.
pub trait Payload: Clone {
    fn same(&self, other: &Self) -> bool;
}

impl Payload for f64 {
    fn same(&self, other: &Self) -> bool {
        (self - other).abs() <= LEAF_TOL
    }
}

impl Payload for bool {
    fn same(&self, other: &Self) -> bool {
        self == other
    }
}

impl Payload for ActionId {
    fn same(&self, other: &Self) -> bool {
        self == other
    }
}

/// Categorical distribution over a variable's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical(pub Vec<f64>);

impl Categorical {
    pub fn point(card: usize, value: u8) -> Self {
        let mut p = alloc::vec![0.0; card];
        p[value as usize] = 1.0;
        Categorical(p)
    }

    pub fn uniform(card: usize) -> Self {
        Categorical(alloc::vec![1.0 / card as f64; card])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn is_normalized(&self) -> bool {
        (self.0.iter().sum::<f64>() - 1.0).abs() <= LEAF_TOL && self.0.iter().all(|&p| p >= 0.0)
    }
}

impl Payload for Categorical {
    fn same(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= LEAF_TOL)
    }
}

/// Dirichlet leaf: observed counts and prior pseudo-counts per value.
#[derive(Clone, Debug, PartialEq)]
pub struct Dirichlet {
    pub counts: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Dirichlet {
    /// Posterior mean (N_i + a_i) / (N + a).
    pub fn expected(&self) -> Categorical {
        let total: f64 = self.counts.iter().zip(&self.alphas).map(|(n, a)| n + a).sum();
        Categorical(self.counts.iter().zip(&self.alphas).map(|(n, a)| (n + a) / total).collect())
    }
}

impl Payload for Dirichlet {
    fn same(&self, other: &Self) -> bool {
        self.counts == other.counts
            && self.alphas.len() == other.alphas.len()
            && self.alphas.iter().zip(&other.alphas).all(|(a, b)| (a - b).abs() <= LEAF_TOL)
    }
}

impl<L> Tree<L> {
    pub fn test(var: VarId, value: u8, pass: Tree<L>, fail: Tree<L>) -> Self {
        Tree::Test(Box::new(TestNode { var, value, pass, fail }))
    }

    /// Leaf reached by `state`; tests on unassigned variables fail.
    pub fn eval(&self, state: &PartialState) -> &L {
        let mut t = self;
        loop {
            match t {
                Tree::Leaf(l) => return l,
                Tree::Test(n) => {
                    t = if state.get(n.var) == Some(n.value) { &n.pass } else { &n.fail };
                }
            }
        }
    }

    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Tree<M> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(f(l)),
            Tree::Test(n) => Tree::test(n.var, n.value, n.pass.map(f), n.fail.map(f)),
        }
    }

    pub fn for_each_leaf(&self, f: &mut impl FnMut(&L)) {
        match self {
            Tree::Leaf(l) => f(l),
            Tree::Test(n) => {
                n.pass.for_each_leaf(f);
                n.fail.for_each_leaf(f);
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Test(n) => n.pass.num_leaves() + n.fail.num_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Test(n) => 1 + n.pass.depth().max(n.fail.depth()),
        }
    }

    pub fn tested_vars(&self) -> VarSet {
        match self {
            Tree::Leaf(_) => VarSet::EMPTY,
            Tree::Test(n) => VarSet::singleton(n.var)
                .union(n.pass.tested_vars())
                .union(n.fail.tested_vars()),
        }
    }

    /// No test on any path is already decided by the tests above it.
    pub fn is_path_consistent(&self, cards: &[usize]) -> bool {
        fn go<L>(t: &Tree<L>, ctx: &Context, cards: &[usize]) -> bool {
            match t {
                Tree::Leaf(_) => true,
                Tree::Test(n) => {
                    (n.value as usize) < cards[n.var.index()]
                        && ctx.decided(n.var, n.value).is_none()
                        && go(&n.pass, &ctx.assume(n.var, n.value, true), cards)
                        && go(&n.fail, &ctx.assume(n.var, n.value, false), cards)
                }
            }
        }
        go(self, &Context::full(cards), cards)
    }

    /// Follows the branch fixed by `ctx` while the context decides the test.
    fn descend(&self, ctx: &Context) -> &Tree<L> {
        let mut t = self;
        while let Tree::Test(n) = t {
            match ctx.decided(n.var, n.value) {
                Some(true) => t = &n.pass,
                Some(false) => t = &n.fail,
                None => break,
            }
        }
        t
    }
}

impl<L: Payload> Tree<L> {
    /// Structural equality with numeric leaf tolerance.
    pub fn same(&self, other: &Tree<L>) -> bool {
        match (self, other) {
            (Tree::Leaf(a), Tree::Leaf(b)) => a.same(b),
            (Tree::Test(a), Tree::Test(b)) => {
                a.var == b.var && a.value == b.value && a.pass.same(&b.pass) && a.fail.same(&b.fail)
            }
            _ => false,
        }
    }

    /// Drops tests fixed by their path and tests whose branches coincide.
    pub fn reduce(&self, cards: &[usize]) -> Tree<L> {
        self.reduce_in(&Context::full(cards))
    }

    pub fn reduce_in(&self, ctx: &Context) -> Tree<L> {
        match self.descend(ctx) {
            Tree::Leaf(l) => Tree::Leaf(l.clone()),
            Tree::Test(n) => {
                let pass = n.pass.reduce_in(&ctx.assume(n.var, n.value, true));
                let fail = n.fail.reduce_in(&ctx.assume(n.var, n.value, false));
                if pass.same(&fail) {
                    pass
                } else {
                    Tree::test(n.var, n.value, pass, fail)
                }
            }
        }
    }
}

/// Combines two trees leafwise: the result evaluates to `f(a(s), b(s))`.
pub fn apply<A, B, C>(
    a: &Tree<A>,
    b: &Tree<B>,
    cards: &[usize],
    f: &mut impl FnMut(&A, &B) -> C,
) -> Tree<C> {
    apply_in(a, b, &Context::full(cards), f)
}

/// [`apply`] restricted to the states allowed by `ctx`.
pub fn apply_in<A, B, C>(
    a: &Tree<A>,
    b: &Tree<B>,
    ctx: &Context,
    f: &mut impl FnMut(&A, &B) -> C,
) -> Tree<C> {
    let a = a.descend(ctx);
    let b = b.descend(ctx);
    match (a, b) {
        (Tree::Leaf(x), Tree::Leaf(y)) => Tree::Leaf(f(x, y)),
        (Tree::Test(n), _) => Tree::test(
            n.var,
            n.value,
            apply_in(&n.pass, b, &ctx.assume(n.var, n.value, true), f),
            apply_in(&n.fail, b, &ctx.assume(n.var, n.value, false), f),
        ),
        (Tree::Leaf(_), Tree::Test(n)) => Tree::test(
            n.var,
            n.value,
            apply_in(a, &n.pass, &ctx.assume(n.var, n.value, true), f),
            apply_in(a, &n.fail, &ctx.assume(n.var, n.value, false), f),
        ),
    }
}

/// Folds `trees` with a leaf combiner, reducing after every step.
pub fn merge<L: Payload>(
    trees: &[Tree<L>],
    cards: &[usize],
    f: &mut impl FnMut(&L, &L) -> L,
) -> Option<Tree<L>> {
    let (first, rest) = trees.split_first()?;
    let mut acc = first.reduce(cards);
    for t in rest {
        acc = apply(&acc, t, cards, f).reduce(cards);
    }
    Some(acc)
}

pub fn max_merge(trees: &[Tree<f64>], cards: &[usize]) -> Option<Tree<f64>> {
    merge(trees, cards, &mut |a: &f64, b: &f64| a.max(*b))
}

/// Indented text rendering with variable and value names.
pub fn render<L>(tree: &Tree<L>, vars: &VarTable, leaf: &mut impl FnMut(&L) -> String) -> String {
    fn go<L>(
        t: &Tree<L>,
        vars: &VarTable,
        leaf: &mut impl FnMut(&L) -> String,
        depth: usize,
        out: &mut String,
    ) {
        match t {
            Tree::Leaf(l) => {
                let _ = writeln!(out, "{}", leaf(l));
            }
            Tree::Test(n) => {
                let d = vars.decl(n.var);
                let _ = writeln!(out, "{} = {}?", d.name, d.domain[n.value as usize]);
                for (label, branch) in [("yes", &n.pass), ("no", &n.fail)] {
                    for _ in 0..=depth {
                        out.push_str("  ");
                    }
                    let _ = write!(out, "{}: ", label);
                    go(branch, vars, leaf, depth + 1, out);
                }
            }
        }
    }
    let mut out = String::new();
    go(tree, vars, leaf, 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::all_states;
    use alloc::vec;

    fn x(i: u8) -> VarId {
        VarId(i)
    }

    #[test]
    fn eval_fails_missing_variable() {
        let t = Tree::test(x(2), 1, Tree::Leaf(1.0), Tree::Leaf(-1.0));
        let s = PartialState::empty(3).with(x(0), 1);
        assert_eq!(*t.eval(&s), -1.0);
    }

    #[test]
    fn coffee_reward_tree() {
        // X=1? -> (Y=1? -> 0.9 : 1.0) : 0.0
        let t = Tree::test(
            x(0),
            1,
            Tree::test(x(1), 1, Tree::Leaf(0.9), Tree::Leaf(1.0)),
            Tree::Leaf(0.0),
        );
        let s = PartialState::complete(&[1, 0]);
        assert_eq!(*t.eval(&s), 1.0);
    }

    #[test]
    fn reduce_identical_branches() {
        let t = Tree::test(x(0), 1, Tree::Leaf(5.0), Tree::Leaf(5.0));
        assert_eq!(t.reduce(&[2]), Tree::Leaf(5.0));
    }

    #[test]
    fn reduce_removes_decided_tests() {
        let t = Tree::test(
            x(0),
            1,
            Tree::test(x(0), 1, Tree::Leaf(1.0), Tree::Leaf(2.0)),
            Tree::test(x(0), 0, Tree::Leaf(3.0), Tree::Leaf(4.0)),
        );
        let r = t.reduce(&[2]);
        assert_eq!(r, Tree::test(x(0), 1, Tree::Leaf(1.0), Tree::Leaf(3.0)));
        assert!(r.is_path_consistent(&[2]));
        assert!(!t.is_path_consistent(&[2]));
    }

    #[test]
    fn max_merge_constants() {
        let m = max_merge(&[Tree::Leaf(2.0), Tree::Leaf(3.0)], &[2]).unwrap();
        assert_eq!(m, Tree::Leaf(3.0));
    }

    #[test]
    fn apply_matches_pointwise() {
        let cards = [2, 3, 2];
        let a = Tree::test(x(1), 2, Tree::Leaf(1.0), Tree::test(x(0), 0, Tree::Leaf(2.0), Tree::Leaf(0.5)));
        let b = Tree::test(x(0), 1, Tree::Leaf(1.5), Tree::test(x(2), 1, Tree::Leaf(-1.0), Tree::Leaf(3.0)));
        let m = apply(&a, &b, &cards, &mut |p: &f64, q: &f64| p * 10.0 + q);
        for s in all_states(&cards) {
            assert_eq!(*m.eval(&s), a.eval(&s) * 10.0 + b.eval(&s));
        }
        assert!(m.is_path_consistent(&cards));
    }

    #[test]
    fn render_names_tests() {
        let vars = VarTable::new(vec![("A".into(), vec!["f".into(), "t".into()])]);
        let t = Tree::test(x(0), 1, Tree::Leaf(1.0), Tree::Leaf(0.0));
        let s = render(&t, &vars, &mut |l: &f64| alloc::format!("{l}"));
        assert_eq!(s, "A = t?\n  yes: 1\n  no: 0\n");
    }
}
