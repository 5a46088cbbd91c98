//! Incremental induction of CPD trees (Bayesian score) and of deterministic
//! label trees (information gain) for rewards and termination.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::math::{ln, ln_beta, ln_marginal};
use crate::model::{PartialState, VarId, VarSet, VarTable};
use crate::structure::AlphaSource;
use crate::tree::{Categorical, Dirichlet, Tree};

const SPLIT_MARGIN: f64 = 1e-9;
const TIE_MARGIN: f64 = 1e-12;

/// Expected parameters (N_i + α_i) / (N + α).
pub fn expected_params(leaf: &Dirichlet) -> Categorical {
    leaf.expected()
}

/// CPD tree for one (action, child), restricted to tests on a fixed parent set.
///
/// Every tree over binary tests on the parents has leaves that are "regions":
/// one nonempty allowed-value set per parent. Counts and pseudo-counts are
/// cached per region, and the best tree below each region is kept by dynamic
/// programming, so the maintained tree always maximizes the tree posterior.
#[derive(Clone, Debug)]
pub struct CpdLearner {
    child_card: usize,
    parents: Vec<VarId>,
    cards: Vec<usize>,
    strides: Vec<usize>,
    nregions: usize,
    counts: Vec<f64>,
    alphas: Vec<f64>,
    jcounts: Vec<u32>,
    use_prior: bool,
    leaf_score: Vec<f64>,
    best: Vec<f64>,
    /// 0 for a leaf, otherwise 1 + index into the region's test list.
    choice: Vec<u32>,
    stale: Vec<bool>,
    order: Vec<u32>,
    tree: Tree<Categorical>,
    dirty: bool,
}

fn popcount(m: usize) -> u32 {
    m.count_ones()
}

impl CpdLearner {
    /// Empty learner; pseudo-counts come from `alpha`. The tree prior is the product of
    /// leaf Beta functions of the pseudo-counts unless `alpha` is the default source.
    pub fn new(child: VarId, parents: VarSet, alpha: &AlphaSource, vars: &VarTable) -> Self {
        let child_card = vars.card(child);
        let pv: Vec<VarId> = parents.iter().collect();
        let cards: Vec<usize> = pv.iter().map(|&v| vars.card(v)).collect();
        let digits: Vec<usize> = cards.iter().map(|&c| (1usize << c) - 1).collect();
        let mut strides = alloc::vec![1; pv.len()];
        for p in (0..pv.len().saturating_sub(1)).rev() {
            strides[p] = strides[p + 1] * digits[p + 1];
        }
        let nregions: usize = digits.iter().product();
        let njoint: usize = cards.iter().product();

        let mut learner = CpdLearner {
            child_card,
            parents: pv,
            cards,
            strides,
            nregions,
            counts: alloc::vec![0.0; nregions * child_card],
            alphas: alloc::vec![0.0; nregions * child_card],
            jcounts: alloc::vec![0; njoint * child_card],
            use_prior: !alpha.is_default(),
            leaf_score: alloc::vec![0.0; nregions],
            best: alloc::vec![0.0; nregions],
            choice: alloc::vec![0; nregions],
            stale: alloc::vec![true; nregions],
            order: Vec::new(),
            tree: Tree::Leaf(Categorical::uniform(child_card)),
            dirty: true,
        };
        let mut order: Vec<u32> = (0..nregions as u32).collect();
        order.sort_by_key(|&r| learner.masks(r as usize).iter().map(|&m| popcount(m)).sum::<u32>());
        learner.order = order;

        let mut j = PartialState::empty(vars.len());
        for jidx in 0..njoint {
            let vals = learner.decode_joint(jidx);
            for (p, &v) in learner.parents.iter().zip(&vals) {
                j.set(*p, v as u8);
            }
            let a = alpha.alphas(vars, child, parents, &j);
            debug_assert!(a.iter().all(|&x| x > 0.0));
            learner.for_regions_containing(&vals, |r, this| {
                for (i, x) in a.iter().enumerate() {
                    this.alphas[r * this.child_card + i] += x;
                }
            });
        }
        learner.restructure();
        learner
    }

    pub fn parents(&self) -> VarSet {
        self.parents.iter().copied().collect()
    }

    fn decode_joint(&self, mut j: usize) -> Vec<usize> {
        let mut vals = alloc::vec![0; self.parents.len()];
        for p in (0..self.parents.len()).rev() {
            vals[p] = j % self.cards[p];
            j /= self.cards[p];
        }
        vals
    }

    fn masks(&self, r: usize) -> Vec<usize> {
        let mut out = alloc::vec![0; self.parents.len()];
        let mut rem = r;
        for p in 0..self.parents.len() {
            out[p] = rem / self.strides[p] + 1;
            rem %= self.strides[p];
        }
        out
    }

    fn for_regions_containing(&mut self, vals: &[usize], mut f: impl FnMut(usize, &mut Self)) {
        // enumerate, per parent, the masks that contain its value
        let np = self.parents.len();
        let full: Vec<usize> = self.cards.iter().map(|&c| 1usize << c).collect();
        let mut masks: Vec<usize> = vals.iter().map(|&v| 1usize << v).collect();
        loop {
            let r: usize = (0..np).map(|p| (masks[p] - 1) * self.strides[p]).sum();
            f(r, self);
            let mut p = np;
            loop {
                if p == 0 {
                    return;
                }
                p -= 1;
                let bit = 1usize << vals[p];
                let mut m = masks[p] + 1;
                while m < full[p] && m & bit == 0 {
                    m += 1;
                }
                if m < full[p] {
                    masks[p] = m;
                    break;
                }
                masks[p] = bit;
            }
        }
    }

    /// Adds an observation; `state` must assign every parent.
    pub fn insert(&mut self, state: &PartialState, child_value: u8) {
        let vals: Vec<usize> = self
            .parents
            .iter()
            .map(|&p| state.get(p).expect("observation misses a parent") as usize)
            .collect();
        let j = vals.iter().zip(&self.cards).fold(0, |acc, (&v, &c)| acc * c + v);
        let i = child_value as usize;
        self.jcounts[j * self.child_card + i] += 1;
        self.for_regions_containing(&vals, |r, this| {
            this.counts[r * this.child_card + i] += 1.0;
            this.stale[r] = true;
        });
        self.dirty = true;
    }

    fn region_leaf_score(&self, r: usize) -> f64 {
        let k = self.child_card;
        let n = &self.counts[r * k..(r + 1) * k];
        let a = &self.alphas[r * k..(r + 1) * k];
        if self.use_prior {
            let post: Vec<f64> = n.iter().zip(a).map(|(x, y)| x + y).collect();
            ln_beta(&post)
        } else {
            ln_marginal(n, a)
        }
    }

    /// Tests available at region `r`, in canonical order, as (parent index, value, pass, fail).
    fn tests(&self, r: usize) -> Vec<(usize, usize, usize, usize)> {
        let masks = self.masks(r);
        let mut out = Vec::new();
        for (p, &m) in masks.iter().enumerate() {
            if popcount(m) < 2 {
                continue;
            }
            for v in 0..self.cards[p] {
                if m & (1 << v) == 0 {
                    continue;
                }
                let base = r - (m - 1) * self.strides[p];
                let pass = base + ((1 << v) - 1) * self.strides[p];
                let fail = base + ((m & !(1 << v)) - 1) * self.strides[p];
                out.push((p, v, pass, fail));
            }
        }
        out
    }

    /// Brings the maintained tree up to date with all inserted observations.
    pub fn restructure(&mut self) {
        if !self.dirty {
            return;
        }
        for k in 0..self.order.len() {
            let r = self.order[k] as usize;
            if !self.stale[r] {
                continue;
            }
            self.stale[r] = false;
            let leaf = self.region_leaf_score(r);
            self.leaf_score[r] = leaf;
            let mut best = leaf;
            let mut choice = 0;
            let mut best_split = f64::NEG_INFINITY;
            for (t, (_, _, pass, fail)) in self.tests(r).into_iter().enumerate() {
                let s = self.best[pass] + self.best[fail];
                if s > best_split + TIE_MARGIN {
                    best_split = s;
                    if s > leaf + SPLIT_MARGIN {
                        best = s;
                        choice = t as u32 + 1;
                    }
                }
            }
            self.best[r] = best;
            self.choice[r] = choice;
        }
        self.tree = self.build(self.nregions - 1);
        self.dirty = false;
    }

    fn dirichlet(&self, r: usize) -> Dirichlet {
        let k = self.child_card;
        Dirichlet { counts: self.counts[r * k..(r + 1) * k].to_vec(), alphas: self.alphas[r * k..(r + 1) * k].to_vec() }
    }

    fn build(&self, r: usize) -> Tree<Categorical> {
        match self.choice[r] {
            0 => Tree::Leaf(self.dirichlet(r).expected()),
            c => {
                let (p, v, pass, fail) = self.tests(r)[c as usize - 1];
                Tree::test(self.parents[p], v as u8, self.build(pass), self.build(fail))
            }
        }
    }

    /// Same structure as `tree()`, with Dirichlet leaves.
    pub fn dirichlet_tree(&self) -> Tree<Dirichlet> {
        fn go(l: &CpdLearner, r: usize) -> Tree<Dirichlet> {
            match l.choice[r] {
                0 => Tree::Leaf(l.dirichlet(r)),
                c => {
                    let (p, v, pass, fail) = l.tests(r)[c as usize - 1];
                    Tree::test(l.parents[p], v as u8, go(l, pass), go(l, fail))
                }
            }
        }
        go(self, self.nregions - 1)
    }

    /// Current most probable tree with expected-parameter leaves.
    pub fn tree(&self) -> &Tree<Categorical> {
        debug_assert!(!self.dirty, "restructure before reading the tree");
        &self.tree
    }

    /// Unnormalized log posterior of the maintained tree.
    pub fn log_posterior(&self) -> f64 {
        self.best[self.nregions - 1]
    }

    /// Unnormalized log posterior of an arbitrary tree over the parent tests.
    pub fn score_structure<L>(&self, t: &Tree<L>) -> f64 {
        fn go<L>(l: &CpdLearner, t: &Tree<L>, r: usize) -> f64 {
            match t {
                Tree::Leaf(_) => l.region_leaf_score(r),
                Tree::Test(n) => {
                    let p = l.parents.iter().position(|&v| v == n.var).expect("test outside parents");
                    let (_, _, pass, fail) = l
                        .tests(r)
                        .into_iter()
                        .find(|&(q, v, _, _)| q == p && v == n.value as usize)
                        .expect("test decided by its path");
                    go(l, &n.pass, pass) + go(l, &n.fail, fail)
                }
            }
        }
        go(self, t, self.nregions - 1)
    }

    /// Region counts equal a recount of raw observations.
    pub fn audit(&self) -> bool {
        let k = self.child_card;
        let njoint = self.jcounts.len() / k;
        let mut recount = alloc::vec![0.0; self.counts.len()];
        let mut this = self.clone();
        for j in 0..njoint {
            let vals = self.decode_joint(j);
            let row: Vec<u32> = self.jcounts[j * k..(j + 1) * k].to_vec();
            this.for_regions_containing(&vals, |r, _| {
                for (i, &c) in row.iter().enumerate() {
                    recount[r * k + i] += c as f64;
                }
            });
        }
        recount == self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.jcounts.iter().map(|&c| c as u64).sum()
    }
}

/// Deterministic tree over labelled examples grown by information gain.
#[derive(Clone, Debug)]
pub struct LabelTree<L> {
    tests: Vec<(VarId, u8)>,
    labels: Vec<L>,
    default: L,
    examples: Vec<Example>,
    index: BTreeMap<(PartialState, usize), usize>,
    root: Node,
}

#[derive(Clone, Debug)]
struct Example {
    state: PartialState,
    label: usize,
    weight: u64,
}

#[derive(Clone, Debug)]
struct Stats {
    total: Vec<u64>,
    pass: Vec<Vec<u64>>,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { stats: Stats, examples: Vec<usize>, stale: bool },
    Split { test: usize, stats: Stats, pass: Box<Node>, fail: Box<Node>, stale: bool },
}

fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    -counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        p * ln(p)
    }).sum::<f64>()
}

impl Stats {
    fn new(ntests: usize, nlabels: usize) -> Self {
        Stats { total: alloc::vec![0; nlabels], pass: alloc::vec![alloc::vec![0; nlabels]; ntests] }
    }

    fn grow_labels(&mut self, nlabels: usize) {
        self.total.resize(nlabels, 0);
        for p in self.pass.iter_mut() {
            p.resize(nlabels, 0);
        }
    }

    fn add(&mut self, tests: &[(VarId, u8)], ex: &Example, w: u64) {
        self.total[ex.label] += w;
        for (t, &(v, x)) in tests.iter().enumerate() {
            if ex.state.get(v) == Some(x) {
                self.pass[t][ex.label] += w;
            }
        }
    }

    fn weight(&self) -> u64 {
        self.total.iter().sum()
    }

    /// Highest-gain test that separates the examples; None if pure or inseparable.
    fn best_test(&self) -> Option<usize> {
        let w = self.weight();
        if self.total.iter().filter(|&&c| c > 0).count() < 2 {
            return None;
        }
        let h = entropy(&self.total);
        let mut best: Option<(usize, f64)> = None;
        let mut fail = alloc::vec![0u64; self.total.len()];
        for (t, pass) in self.pass.iter().enumerate() {
            let wp: u64 = pass.iter().sum();
            if wp == 0 || wp == w {
                continue;
            }
            for (f, (a, b)) in fail.iter_mut().zip(self.total.iter().zip(pass)) {
                *f = a - b;
            }
            let gain = h - (wp as f64 * entropy(pass) + (w - wp) as f64 * entropy(&fail)) / w as f64;
            if best.map_or(true, |(_, g)| gain > g + TIE_MARGIN) {
                best = Some((t, gain));
            }
        }
        best.map(|(t, _)| t)
    }
}

impl<L: Clone + PartialEq> LabelTree<L> {
    pub fn new(tests: Vec<(VarId, u8)>, default: L) -> Self {
        let n = tests.len();
        LabelTree {
            tests,
            labels: Vec::new(),
            default,
            examples: Vec::new(),
            index: BTreeMap::new(),
            root: Node::Leaf { stats: Stats::new(n, 0), examples: Vec::new(), stale: false },
        }
    }

    /// All (var, value) tests over `vars`, in canonical order.
    pub fn tests_over(vars: VarSet, table: &VarTable) -> Vec<(VarId, u8)> {
        vars.iter().flat_map(|v| (0..table.card(v) as u8).map(move |x| (v, x))).collect()
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    fn label_index(&mut self, label: &L) -> usize {
        match self.labels.iter().position(|l| l == label) {
            Some(k) => k,
            None => {
                self.labels.push(label.clone());
                let n = self.labels.len();
                fn grow(node: &mut Node, n: usize) {
                    match node {
                        Node::Leaf { stats, .. } => stats.grow_labels(n),
                        Node::Split { stats, pass, fail, .. } => {
                            stats.grow_labels(n);
                            grow(pass, n);
                            grow(fail, n);
                        }
                    }
                }
                grow(&mut self.root, n);
                n - 1
            }
        }
    }

    /// Adds one example (or one more copy of an existing one) and marks its path stale.
    pub fn insert(&mut self, state: PartialState, label: &L) {
        let li = self.label_index(label);
        let key = (state, li);
        let (idx, fresh) = match self.index.get(&key) {
            Some(&k) => {
                self.examples[k].weight += 1;
                (k, false)
            }
            None => {
                let k = self.examples.len();
                self.examples.push(Example { state: key.0.clone(), label: li, weight: 1 });
                self.index.insert(key, k);
                (k, true)
            }
        };
        let ex = &self.examples[idx];
        let tests = &self.tests;
        let mut node = &mut self.root;
        loop {
            match node {
                Node::Leaf { stats, examples, stale } => {
                    stats.add(tests, ex, 1);
                    if fresh {
                        examples.push(idx);
                    }
                    *stale = true;
                    break;
                }
                Node::Split { test, stats, pass, fail, stale } => {
                    stats.add(tests, ex, 1);
                    *stale = true;
                    let (v, x) = tests[*test];
                    node = if ex.state.get(v) == Some(x) { pass } else { fail };
                }
            }
        }
    }

    fn build(&self, ex: Vec<usize>) -> Node {
        let mut stats = Stats::new(self.tests.len(), self.labels.len());
        for &k in &ex {
            stats.add(&self.tests, &self.examples[k], self.examples[k].weight);
        }
        match stats.best_test() {
            None => Node::Leaf { stats, examples: ex, stale: false },
            Some(t) => {
                let (v, x) = self.tests[t];
                let (p, f): (Vec<usize>, Vec<usize>) =
                    ex.into_iter().partition(|&k| self.examples[k].state.get(v) == Some(x));
                Node::Split {
                    test: t,
                    stats,
                    pass: Box::new(self.build(p)),
                    fail: Box::new(self.build(f)),
                    stale: false,
                }
            }
        }
    }

    fn collect(node: &Node, out: &mut Vec<usize>) {
        match node {
            Node::Leaf { examples, .. } => out.extend_from_slice(examples),
            Node::Split { pass, fail, .. } => {
                Self::collect(pass, out);
                Self::collect(fail, out);
            }
        }
    }

    fn restructure_node(&self, node: Node) -> Node {
        match node {
            Node::Leaf { stats, examples, stale: true } => match stats.best_test() {
                None => Node::Leaf { stats, examples, stale: false },
                Some(_) => self.build(examples),
            },
            Node::Split { test, stats, pass, fail, stale: true } => {
                if stats.best_test() == Some(test) {
                    Node::Split {
                        test,
                        stats,
                        pass: Box::new(self.restructure_node(*pass)),
                        fail: Box::new(self.restructure_node(*fail)),
                        stale: false,
                    }
                } else {
                    let mut ex = Vec::new();
                    Self::collect(&pass, &mut ex);
                    Self::collect(&fail, &mut ex);
                    ex.sort_unstable();
                    self.build(ex)
                }
            }
            fresh => fresh,
        }
    }

    /// Re-checks every stale node, replacing tests that are no longer best.
    pub fn restructure(&mut self) {
        let root = core::mem::replace(
            &mut self.root,
            Node::Leaf { stats: Stats::new(0, 0), examples: Vec::new(), stale: false },
        );
        self.root = self.restructure_node(root);
    }

    /// Rebuilds with a new candidate test list, keeping examples that satisfy `keep`.
    pub fn rebuild(&mut self, tests: Vec<(VarId, u8)>, keep: impl Fn(&PartialState) -> bool) {
        let old = core::mem::take(&mut self.examples);
        self.index.clear();
        self.tests = tests;
        for ex in old.into_iter().filter(|e| keep(&e.state)) {
            self.index.insert((ex.state.clone(), ex.label), self.examples.len());
            self.examples.push(ex);
        }
        self.root = self.build((0..self.examples.len()).collect());
    }

    fn leaf_label(&self, stats: &Stats) -> L {
        let mut best: Option<(usize, u64)> = None;
        for (k, &c) in stats.total.iter().enumerate() {
            if c > 0 && best.map_or(true, |(_, b)| c > b) {
                best = Some((k, c));
            }
        }
        best.map_or_else(|| self.default.clone(), |(k, _)| self.labels[k].clone())
    }

    /// Materialized tree with majority labels at the leaves.
    pub fn tree(&self) -> Tree<L> {
        fn go<L: Clone + PartialEq>(t: &LabelTree<L>, n: &Node) -> Tree<L> {
            match n {
                Node::Leaf { stats, .. } => Tree::Leaf(t.leaf_label(stats)),
                Node::Split { test, pass, fail, .. } => {
                    let (v, x) = t.tests[*test];
                    Tree::test(v, x, go(t, pass), go(t, fail))
                }
            }
        }
        go(self, &self.root)
    }

    /// Cached statistics at every node equal a recount of the examples routed there.
    pub fn audit(&self) -> bool {
        fn go<L: Clone + PartialEq>(t: &LabelTree<L>, n: &Node) -> Option<Vec<usize>> {
            let (stats, ex) = match n {
                Node::Leaf { stats, examples, .. } => (stats, examples.clone()),
                Node::Split { test, stats, pass, fail, .. } => {
                    let (v, x) = t.tests[*test];
                    let p = go(t, pass)?;
                    let f = go(t, fail)?;
                    if p.iter().any(|&k| t.examples[k].state.get(v) != Some(x))
                        || f.iter().any(|&k| t.examples[k].state.get(v) == Some(x))
                    {
                        return None;
                    }
                    (stats, p.into_iter().chain(f).collect())
                }
            };
            let mut recount = Stats::new(t.tests.len(), t.labels.len());
            for &k in &ex {
                recount.add(&t.tests, &t.examples[k], t.examples[k].weight);
            }
            (recount.total == stats.total && recount.pass == stats.pass).then_some(ex)
        }
        go(self, &self.root).map_or(false, |ex| ex.len() == self.examples.len())
    }
}

/// Outcome of offering a reward observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactOutcome {
    Inserted,
    Duplicate,
    Inconsistent,
}

/// Monotonic reward facts and the reward tree built from them.
#[derive(Clone, Debug)]
pub struct RewardLearner {
    scope: VarSet,
    /// Distinct observations (over the awareness at the time) and their rewards.
    facts: BTreeMap<PartialState, f64>,
    /// Facts projected onto the scope.
    index: BTreeMap<PartialState, f64>,
    tree: LabelTree<f64>,
}

impl RewardLearner {
    pub fn new(scope: VarSet, vars: &VarTable) -> Self {
        RewardLearner {
            scope,
            facts: BTreeMap::new(),
            index: BTreeMap::new(),
            tree: LabelTree::new(LabelTree::<f64>::tests_over(scope, vars), 0.0),
        }
    }

    pub fn scope(&self) -> VarSet {
        self.scope
    }

    /// Number of distinct projected facts.
    pub fn num_facts(&self) -> usize {
        self.index.len()
    }

    /// Offers the reward received on entering an observed state; `obs` must assign the scope.
    pub fn update(&mut self, obs: &PartialState, reward: f64) -> FactOutcome {
        let key = obs.project(self.scope);
        match self.index.get(&key) {
            Some(&r) if r == reward => {
                self.facts.insert(obs.clone(), reward);
                FactOutcome::Duplicate
            }
            Some(_) => FactOutcome::Inconsistent,
            None => {
                self.index.insert(key.clone(), reward);
                self.facts.insert(obs.clone(), reward);
                self.tree.insert(key, &reward);
                self.tree.restructure();
                FactOutcome::Inserted
            }
        }
    }

    /// Adds `z` to the scope, drops facts that do not assign the whole new scope and
    /// rebuilds the tree. Returns false if the surviving facts still conflict.
    pub fn expand_scope(&mut self, z: VarId, vars: &VarTable) -> bool {
        self.scope.insert(z);
        let scope = self.scope;
        self.facts.retain(|s, _| s.assigns_all(scope));
        self.index.clear();
        let mut consistent = true;
        for (s, &r) in &self.facts {
            let key = s.project(scope);
            match self.index.get(&key) {
                Some(&old) if old != r => consistent = false,
                Some(_) => {}
                None => {
                    self.index.insert(key, r);
                }
            }
        }
        self.tree.rebuild(LabelTree::<f64>::tests_over(scope, vars), |_| false);
        for (k, r) in &self.index {
            self.tree.insert(k.clone(), r);
        }
        self.tree.restructure();
        consistent
    }

    pub fn tree(&self) -> Tree<f64> {
        self.tree.tree()
    }

    /// The tree reproduces every stored fact.
    pub fn is_consistent(&self) -> bool {
        let t = self.tree.tree();
        self.index.iter().all(|(s, r)| *t.eval(s) == *r)
    }

    pub fn audit(&self) -> bool {
        self.tree.audit()
    }
}
