//! The true factored MDP: DBN per action, reward tree, terminal and start predicates.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{all_states, ActionDecl, ActionId, PartialState, VarId, VarSet, VarTable};
use crate::tree::{apply, Categorical, Tree};

#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    True,
    Atom(VarId, u8),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    /// Atoms on unassigned variables are false.
    pub fn eval(&self, s: &PartialState) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Atom(v, x) => s.get(*v) == Some(*x),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(s)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(s)),
            Predicate::Not(p) => !p.eval(s),
        }
    }

    pub fn to_tree(&self, cards: &[usize]) -> Tree<bool> {
        let t = match self {
            Predicate::True => Tree::Leaf(true),
            Predicate::Atom(v, x) => Tree::test(*v, *x, Tree::Leaf(true), Tree::Leaf(false)),
            Predicate::And(ps) => ps.iter().fold(Tree::Leaf(true), |acc, p| {
                apply(&acc, &p.to_tree(cards), cards, &mut |a: &bool, b: &bool| *a && *b).reduce(cards)
            }),
            Predicate::Or(ps) => ps.iter().fold(Tree::Leaf(false), |acc, p| {
                apply(&acc, &p.to_tree(cards), cards, &mut |a: &bool, b: &bool| *a || *b).reduce(cards)
            }),
            Predicate::Not(p) => p.to_tree(cards).map(&mut |b: &bool| !*b),
        };
        t.reduce(cards)
    }

    pub fn vars(&self) -> VarSet {
        match self {
            Predicate::True => VarSet::EMPTY,
            Predicate::Atom(v, _) => VarSet::singleton(*v),
            Predicate::And(ps) | Predicate::Or(ps) => {
                ps.iter().fold(VarSet::EMPTY, |acc, p| acc.union(p.vars()))
            }
            Predicate::Not(p) => p.vars(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("action {action}: CPD for {var} has a leaf that does not sum to 1")]
    Unnormalized { action: String, var: String },
    #[error("action {action}: CPD for {var} has a leaf of the wrong size")]
    LeafSize { action: String, var: String },
    #[error("action {action}: missing CPD for {var}")]
    MissingCpd { action: String, var: String },
    #[error("tree tests a value outside a domain or repeats a decided test")]
    Inconsistent,
    #[error("reward tree has a non-finite leaf")]
    NonFiniteReward,
    #[error("discount must lie in (0, 1)")]
    Discount,
    #[error("duplicate name {0}")]
    Duplicate(String),
    #[error("empty start-state set")]
    EmptyStart,
}

/// Ground-truth factored MDP.
#[derive(Clone, Debug)]
pub struct Fmdp {
    pub vars: VarTable,
    pub actions: Vec<ActionDecl>,
    /// `cpds[a][x]`: distribution of next-step `x` given the current state under `a`.
    pub cpds: Vec<Vec<Tree<Categorical>>>,
    pub reward: Tree<f64>,
    pub terminal: Predicate,
    pub start: Predicate,
    pub discount: f64,
}

impl Fmdp {
    pub fn validate(&self) -> Result<(), ModelError> {
        let cards = self.vars.cards();
        for (i, d) in self.vars.decls().iter().enumerate() {
            if self.vars.decls()[..i].iter().any(|e| e.name == d.name) {
                return Err(ModelError::Duplicate(d.name.clone()));
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            if self.actions[..i].iter().any(|b| b.name == a.name) {
                return Err(ModelError::Duplicate(a.name.clone()));
            }
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(ModelError::Discount);
        }
        for (ai, a) in self.actions.iter().enumerate() {
            let row = &self.cpds[ai];
            for d in self.vars.decls() {
                let err_args = || (a.name.clone(), d.name.clone());
                let Some(t) = row.get(d.id.index()) else {
                    let (action, var) = err_args();
                    return Err(ModelError::MissingCpd { action, var });
                };
                if !t.is_path_consistent(&cards) {
                    return Err(ModelError::Inconsistent);
                }
                let mut bad_size = false;
                let mut bad_sum = false;
                t.for_each_leaf(&mut |c: &Categorical| {
                    bad_size |= c.0.len() != d.card();
                    bad_sum |= !c.is_normalized();
                });
                if bad_size {
                    let (action, var) = err_args();
                    return Err(ModelError::LeafSize { action, var });
                }
                if bad_sum {
                    let (action, var) = err_args();
                    return Err(ModelError::Unnormalized { action, var });
                }
            }
        }
        if !self.reward.is_path_consistent(&cards) {
            return Err(ModelError::Inconsistent);
        }
        let mut finite = true;
        self.reward.for_each_leaf(&mut |r: &f64| finite &= r.is_finite());
        if !finite {
            return Err(ModelError::NonFiniteReward);
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_ids(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.actions.iter().map(|a| a.id)
    }

    pub fn action_by_name(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().find(|a| a.name == name).map(|a| a.id)
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.actions[a.index()].name
    }

    pub fn cpd(&self, a: ActionId, x: VarId) -> &Tree<Categorical> {
        &self.cpds[a.index()][x.index()]
    }

    /// Variables tested by the reward tree.
    pub fn reward_scope(&self) -> VarSet {
        self.reward.tested_vars()
    }

    pub fn terminal_tree(&self) -> Tree<bool> {
        self.terminal.to_tree(&self.vars.cards())
    }

    pub fn is_terminal(&self, s: &PartialState) -> bool {
        self.terminal.eval(s)
    }

    /// All complete states satisfying the start predicate, in index order.
    pub fn start_states(&self) -> Vec<PartialState> {
        let cards = self.vars.cards();
        all_states(&cards).filter(|s| self.start.eval(s)).collect()
    }

    /// Probability of the complete successor `next` from `s` under `a`.
    pub fn transition_prob(&self, s: &PartialState, a: ActionId, next: &PartialState) -> f64 {
        self.vars
            .ids()
            .map(|x| self.cpd(a, x).eval(s).0[next.get(x).unwrap() as usize])
            .product()
    }

    /// Sparse successor distribution of a complete state.
    pub fn successors(&self, s: &PartialState, a: ActionId) -> Vec<(PartialState, f64)> {
        let mut out: Vec<(PartialState, f64)> = alloc::vec![(s.clone(), 1.0)];
        for x in self.vars.ids() {
            let dist = self.cpd(a, x).eval(s);
            let mut next = Vec::with_capacity(out.len() * 2);
            for (partial, p) in &out {
                for (v, &q) in dist.0.iter().enumerate() {
                    if q > 0.0 {
                        next.push((partial.clone().with(x, v as u8), p * q));
                    }
                }
            }
            out = next;
        }
        out
    }
}
