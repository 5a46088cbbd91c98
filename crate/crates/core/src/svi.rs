//! Structured value iteration over decision trees, plus flat policy evaluation.

use alloc::vec::Vec;

use crate::fmdp::Fmdp;
use crate::model::{all_states, state_index, ActionId, Context, PartialState, VarId};
use crate::tree::{apply, apply_in, max_merge, Categorical, Payload, Tree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SviError {
    #[error("no CPD for tested variable {0:?}")]
    MissingCpd(VarId),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
}

/// Next-step CPD trees of one action, indexed by variable.
#[derive(Clone, Debug, Default)]
pub struct ActionModel {
    pub cpds: Vec<Option<Tree<Categorical>>>,
}

impl ActionModel {
    pub fn from_fmdp(m: &Fmdp, a: ActionId) -> Self {
        ActionModel { cpds: m.cpds[a.index()].iter().cloned().map(Some).collect() }
    }
}

/// What a planner needs: reward, termination and per-action dynamics.
#[derive(Clone, Copy)]
pub struct PlanningProblem<'a> {
    pub cards: &'a [usize],
    pub reward: &'a Tree<f64>,
    pub terminal: &'a Tree<bool>,
    pub actions: &'a [(ActionId, &'a ActionModel)],
    pub discount: f64,
}

#[derive(Clone, Debug)]
pub struct ValueModel {
    pub v: Tree<f64>,
    pub q: Vec<(ActionId, Tree<f64>)>,
    pub iterations: usize,
}

impl ValueModel {
    pub fn zero() -> Self {
        ValueModel { v: Tree::Leaf(0.0), q: Vec::new(), iterations: 0 }
    }

    /// Q values of `s` in action order; missing actions read as 0.
    pub fn q_value(&self, a: ActionId, s: &PartialState) -> f64 {
        self.q.iter().find(|(b, _)| *b == a).map_or(0.0, |(_, t)| *t.eval(s))
    }
}

/// E[V(s') | s] as a tree over current states. Each V subtree is regressed once given the
/// next-step values already conditioned on (`next`); a test on X' mixes its two regressed
/// branches leafwise under X's CPD.
fn expected_tree(v: &Tree<f64>, dbn: &ActionModel, next: &mut Context, cards: &[usize]) -> Result<Tree<f64>, SviError> {
    let n = match v {
        Tree::Leaf(x) => return Ok(Tree::Leaf(*x)),
        Tree::Test(n) => n,
    };
    let mask = next.mask(n.var);
    let bit = 1u16 << n.value;
    if mask == bit {
        return expected_tree(&n.pass, dbn, next, cards);
    }
    if mask & bit == 0 {
        return expected_tree(&n.fail, dbn, next, cards);
    }
    let cpd = dbn.cpds.get(n.var.index()).and_then(|c| c.as_ref()).ok_or(SviError::MissingCpd(n.var))?;
    next.set_mask(n.var, bit);
    let pass = expected_tree(&n.pass, dbn, next, cards);
    next.set_mask(n.var, mask & !bit);
    let fail = expected_tree(&n.fail, dbn, next, cards);
    next.set_mask(n.var, mask);
    let (pass, fail) = (pass?, fail?);
    let mut ctx = Context::full(cards);
    Ok(mix(cpd, &pass, &fail, mask, n.value, &mut ctx).reduce(cards))
}

/// Walks `cpd` and at each leaf weights `pass`/`fail` by the probability of the tested value
/// among the values still allowed by `mask`.
fn mix(cpd: &Tree<Categorical>, pass: &Tree<f64>, fail: &Tree<f64>, mask: u16, value: u8, ctx: &mut Context) -> Tree<f64> {
    match cpd {
        Tree::Test(t) => match ctx.decided(t.var, t.value) {
            Some(true) => mix(&t.pass, pass, fail, mask, value, ctx),
            Some(false) => mix(&t.fail, pass, fail, mask, value, ctx),
            None => {
                let m = ctx.mask(t.var);
                ctx.set_mask(t.var, 1 << t.value);
                let a = mix(&t.pass, pass, fail, mask, value, ctx);
                ctx.set_mask(t.var, m & !(1 << t.value));
                let b = mix(&t.fail, pass, fail, mask, value, ctx);
                ctx.set_mask(t.var, m);
                Tree::test(t.var, t.value, a, b)
            }
        },
        Tree::Leaf(dist) => {
            let mut p_pass = 0.0;
            let mut p_fail = 0.0;
            for (k, &p) in dist.0.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    if k == value as usize {
                        p_pass += p;
                    } else {
                        p_fail += p;
                    }
                }
            }
            let z = p_pass + p_fail;
            if z <= 0.0 {
                Tree::Leaf(0.0)
            } else if p_fail <= 0.0 {
                pass.reduce_in(ctx)
            } else if p_pass <= 0.0 {
                fail.reduce_in(ctx)
            } else {
                let (wp, wf) = (p_pass / z, p_fail / z);
                apply_in(pass, fail, ctx, &mut |a: &f64, b: &f64| wp * a + wf * b)
            }
        }
    }
}

/// Q^a = R + γ E[V(s') | s, a], computed on trees.
pub fn regress(v: &Tree<f64>, dbn: &ActionModel, reward: &Tree<f64>, discount: f64, cards: &[usize]) -> Result<Tree<f64>, SviError> {
    let e = expected_tree(v, dbn, &mut Context::full(cards), cards)?;
    Ok(apply(reward, &e, cards, &mut |r: &f64, x: &f64| r + discount * x).reduce(cards))
}

/// V = R on terminal states, max_a Q^a elsewhere.
pub fn terminal_select(terminal: &Tree<bool>, reward: &Tree<f64>, other: &Tree<f64>, cards: &[usize]) -> Tree<f64> {
    let r_or_none = apply(terminal, reward, cards, &mut |t: &bool, r: &f64| if *t { Some(*r) } else { None });
    apply(&r_or_none, other, cards, &mut |o: &Option<f64>, q: &f64| o.unwrap_or(*q)).reduce(cards)
}

/// One Bellman backup from `v_prev`.
pub fn inc_svi(p: &PlanningProblem<'_>, v_prev: &Tree<f64>) -> Result<ValueModel, SviError> {
    let mut q = Vec::with_capacity(p.actions.len());
    for (a, dbn) in p.actions {
        q.push((*a, regress(v_prev, dbn, p.reward, p.discount, p.cards)?));
    }
    let trees: Vec<Tree<f64>> = q.iter().map(|(_, t)| t.clone()).collect();
    let best = max_merge(&trees, p.cards).unwrap_or_else(|| p.reward.clone());
    let v = terminal_select(p.terminal, p.reward, &best, p.cards);
    Ok(ValueModel { v, q, iterations: 1 })
}

/// Largest absolute difference between two trees over all states.
pub fn max_difference(a: &Tree<f64>, b: &Tree<f64>, cards: &[usize]) -> f64 {
    let d = apply(a, b, cards, &mut |x: &f64, y: &f64| (x - y).abs());
    let mut m: f64 = 0.0;
    d.for_each_leaf(&mut |x: &f64| m = m.max(*x));
    m
}

/// Backups from V = 0 until successive value trees differ by less than `tol`.
pub fn full_svi(p: &PlanningProblem<'_>, tol: f64, max_iter: usize) -> Result<ValueModel, SviError> {
    let mut v = Tree::Leaf(0.0);
    for it in 1..=max_iter {
        let mut vm = inc_svi(p, &v)?;
        let delta = max_difference(&vm.v, &v, p.cards);
        vm.iterations = it;
        if delta < tol {
            return Ok(vm);
        }
        v = vm.v;
    }
    Err(SviError::NoConvergence(max_iter))
}

#[derive(Clone, Debug)]
struct Scored {
    value: f64,
    action: ActionId,
}

impl Payload for Scored {
    fn same(&self, other: &Self) -> bool {
        self.action == other.action && self.value.same(&other.value)
    }
}

/// Greedy action tree; ties go to the earliest action in `q`.
pub fn greedy_policy(q: &[(ActionId, Tree<f64>)], cards: &[usize]) -> Option<Tree<ActionId>> {
    let ((a0, t0), rest) = q.split_first()?;
    let mut acc = t0.map(&mut |v: &f64| Scored { value: *v, action: *a0 });
    for (a, t) in rest {
        acc = apply(&acc, t, cards, &mut |s: &Scored, v: &f64| {
            if *v > s.value {
                Scored { value: *v, action: *a }
            } else {
                s.clone()
            }
        })
        .reduce(cards);
    }
    Some(acc.map(&mut |s: &Scored| s.action).reduce(cards))
}

/// Explicit state-space model for exact evaluation on small domains.
#[derive(Clone, Debug)]
pub struct FlatModel {
    pub cards: Vec<usize>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    /// `succ[a][s]`: successor indices with probabilities.
    pub succ: Vec<Vec<Vec<(u32, f64)>>>,
    pub starts: Vec<u32>,
    pub discount: f64,
}

impl FlatModel {
    pub fn from_fmdp(m: &Fmdp) -> Self {
        let cards = m.vars.cards();
        let states: Vec<PartialState> = all_states(&cards).collect();
        let reward = states.iter().map(|s| *m.reward.eval(s)).collect();
        let terminal = states.iter().map(|s| m.is_terminal(s)).collect();
        let succ = m
            .action_ids()
            .map(|a| {
                states
                    .iter()
                    .map(|s| {
                        m.successors(s, a)
                            .into_iter()
                            .map(|(n, p)| (state_index(&n, &cards) as u32, p))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let starts = m.start_states().iter().map(|s| state_index(s, &cards) as u32).collect();
        FlatModel { cards, reward, terminal, succ, starts, discount: m.discount }
    }

    pub fn num_states(&self) -> usize {
        self.reward.len()
    }

    pub fn state(&self, idx: usize) -> PartialState {
        let mut vals = alloc::vec![0u8; self.cards.len()];
        let mut k = idx;
        for i in (0..self.cards.len()).rev() {
            vals[i] = (k % self.cards[i]) as u8;
            k /= self.cards[i];
        }
        PartialState::complete(&vals)
    }

    fn backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.reward[s] + self.discount * self.succ[a][s].iter().map(|&(n, p)| p * v[n as usize]).sum::<f64>()
    }

    /// Optimal values by flat value iteration.
    pub fn value_iteration(&self, tol: f64) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.num_states()];
        loop {
            let mut delta: f64 = 0.0;
            let mut next = v.clone();
            for s in 0..self.num_states() {
                next[s] = if self.terminal[s] {
                    self.reward[s]
                } else {
                    (0..self.succ.len()).map(|a| self.backup(s, a, &v)).fold(f64::NEG_INFINITY, f64::max)
                };
                delta = delta.max((next[s] - v[s]).abs());
            }
            v = next;
            if delta < tol {
                return v;
            }
        }
    }

    /// Values of a stochastic policy given as per-state action probabilities.
    pub fn evaluate(&self, policy: &[Vec<f64>], tol: f64) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.num_states()];
        loop {
            let mut delta: f64 = 0.0;
            let mut next = v.clone();
            for s in 0..self.num_states() {
                next[s] = if self.terminal[s] {
                    self.reward[s]
                } else {
                    policy[s]
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(a, &p)| p * self.backup(s, a, &v))
                        .sum()
                };
                delta = delta.max((next[s] - v[s]).abs());
            }
            v = next;
            if delta < tol {
                return v;
            }
        }
    }

    /// Values of a deterministic policy.
    pub fn evaluate_deterministic(&self, policy: &[ActionId], tol: f64) -> Vec<f64> {
        let n = self.succ.len();
        let probs: Vec<Vec<f64>> = policy
            .iter()
            .map(|a| {
                let mut p = alloc::vec![0.0; n];
                p[a.index()] = 1.0;
                p
            })
            .collect();
        self.evaluate(&probs, tol)
    }

    /// Mean of `v` over the start states.
    pub fn start_mean(&self, v: &[f64]) -> f64 {
        self.starts.iter().map(|&s| v[s as usize]).sum::<f64>() / self.starts.len() as f64
    }

    /// Expected loss against the optimal values over the uniform start distribution.
    pub fn policy_error(&self, v_opt: &[f64], v_pi: &[f64]) -> f64 {
        self.start_mean(v_opt) - self.start_mean(v_pi)
    }
}

/// Mean start value minus mean return over a window of episode returns.
pub fn policy_error_approx(start_value: f64, returns: &[f64]) -> Option<f64> {
    if returns.is_empty() {
        return None;
    }
    Some(start_value - returns.iter().sum::<f64>() / returns.len() as f64)
}
