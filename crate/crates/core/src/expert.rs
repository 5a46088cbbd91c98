//! The omniscient, truthful, non-exhaustive expert.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::fmdp::Fmdp;
use crate::model::{ActionId, PartialState, VarId, VarSet};
use crate::svi::{full_svi, ActionModel, PlanningProblem, SviError, ValueModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpertError {
    #[error("anchored states at steps {0} and {1} are identical")]
    IdenticalAnchors(u64, u64),
    #[error("known reward scope already covers the true scope")]
    ScopeComplete,
    #[error("no recorded state for step {0}")]
    UnknownStep(u64),
}

/// Optimal values and Q functions of the true model, shared by all replicas.
#[derive(Debug)]
pub struct Oracle {
    pub model: Arc<Fmdp>,
    pub values: ValueModel,
    /// Mean optimal value over the start states.
    pub start_value: f64,
    pub reward_scope: VarSet,
}

impl Oracle {
    pub fn new(model: Arc<Fmdp>, tol: f64) -> Result<Self, SviError> {
        let cards = model.vars.cards();
        let dbns: Vec<ActionModel> = model.action_ids().map(|a| ActionModel::from_fmdp(&model, a)).collect();
        let actions: Vec<(ActionId, &ActionModel)> = model.action_ids().zip(dbns.iter()).collect();
        let terminal = model.terminal_tree();
        let problem = PlanningProblem {
            cards: &cards,
            reward: &model.reward,
            terminal: &terminal,
            actions: &actions,
            discount: model.discount,
        };
        let values = full_svi(&problem, tol, 100_000)?;
        let starts = model.start_states();
        let start_value = starts.iter().map(|s| *values.v.eval(s)).sum::<f64>() / starts.len().max(1) as f64;
        let reward_scope = model.reward_scope();
        Ok(Oracle { model, values, start_value, reward_scope })
    }

    pub fn v(&self, s: &PartialState) -> f64 {
        *self.values.v.eval(s)
    }

    pub fn q(&self, s: &PartialState, a: ActionId) -> f64 {
        *self.values.q[a.index()].1.eval(s)
    }

    /// argmax_a Q+(s, a), earliest action on ties.
    pub fn best_action(&self, s: &PartialState) -> ActionId {
        let mut best = (ActionId(0), f64::NEG_INFINITY);
        for (a, t) in &self.values.q {
            let q = *t.eval(s);
            if q > best.1 {
                best = (*a, q);
            }
        }
        best.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertParams {
    pub mu: u64,
    pub beta: f64,
    pub kappa: u64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        ExpertParams { mu: 10, beta: 0.1, kappa: 50 }
    }
}

/// Better-action advice anchored at a global step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Advice {
    pub anchor: u64,
    pub better: ActionId,
    pub worse: ActionId,
}

/// Queries the agent may put to its teacher.
pub trait Teacher {
    fn answer_distinct_variable(&mut self, ta: u64, tb: u64) -> Result<VarId, ExpertError>;
    fn answer_reward_scope(&mut self, known: VarSet) -> Result<VarId, ExpertError>;
}

#[derive(Clone, Debug)]
struct Running {
    ret: f64,
    discount: f64,
    /// γ^m (V+(s_m) − R(s_m)) for the latest state, or 0 once terminal.
    tail: f64,
}

pub struct Expert {
    oracle: Arc<Oracle>,
    params: ExpertParams,
    last_utterance: Option<u64>,
    window_start: u64,
    returns: Vec<f64>,
    running: Option<Running>,
    known: VarSet,
    history: Vec<PartialState>,
    utterances: u64,
}

impl Expert {
    pub fn new(oracle: Arc<Oracle>, params: ExpertParams) -> Self {
        Expert {
            oracle,
            params,
            last_utterance: None,
            window_start: 0,
            returns: Vec::new(),
            running: None,
            known: VarSet::EMPTY,
            history: Vec::new(),
            utterances: 0,
        }
    }

    pub fn oracle(&self) -> &Arc<Oracle> {
        &self.oracle
    }

    pub fn params(&self) -> ExpertParams {
        self.params
    }

    /// Variables the agent has shown it is aware of.
    pub fn known(&self) -> VarSet {
        self.known
    }

    pub fn utterances(&self) -> u64 {
        self.utterances
    }

    pub fn completed_returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn begin_episode(&mut self, s0: &PartialState) {
        let r = *self.oracle.model.reward.eval(s0);
        self.running = Some(Running { ret: r, discount: 1.0, tail: self.oracle.v(s0) - r });
    }

    /// Bookkeeping for the step taken at global step `t` from `s` into `next`.
    pub fn record_step(&mut self, t: u64, s: &PartialState, next: &PartialState, reward: f64, terminal: bool) {
        debug_assert_eq!(self.history.len() as u64, t);
        self.history.push(s.clone());
        let gamma = self.oracle.model.discount;
        if let Some(run) = self.running.as_mut() {
            run.discount *= gamma;
            run.ret += run.discount * reward;
            run.tail = if terminal { 0.0 } else { run.discount * (self.oracle.v(next) - reward) };
        }
        if terminal {
            self.end_episode();
        }
    }

    /// Closes the running episode (termination or cutoff).
    pub fn end_episode(&mut self) {
        if let Some(run) = self.running.take() {
            self.returns.push(run.ret);
        }
    }

    /// Err(from, n): mean start value minus mean return over episodes `from..`,
    /// the unfinished one valued optimistically.
    pub fn err(&self, from: u64) -> f64 {
        let from = (from as usize).min(self.returns.len());
        let mut sum: f64 = self.returns[from..].iter().sum();
        let mut n = self.returns.len() - from;
        if let Some(run) = &self.running {
            sum += run.ret + run.tail;
            n += 1;
        }
        if n == 0 {
            return 0.0;
        }
        self.oracle.start_value - sum / n as f64
    }

    /// Err over every episode so far.
    pub fn err_all(&self) -> f64 {
        self.err(0)
    }

    /// Decides whether to advise after the agent took `a` in `s` (step `t`, in-episode index `m`, episode `n`).
    pub fn monitor(&mut self, t: u64, m: u64, n: u64, s: &PartialState, a: ActionId) -> Option<Advice> {
        if let Some(last) = self.last_utterance {
            if t - last <= self.params.mu {
                return None;
            }
        }
        if !(self.err(self.window_start) > self.params.beta || m > self.params.kappa) {
            return None;
        }
        let better = self.oracle.best_action(s);
        if !(self.oracle.q(s, better) > self.oracle.q(s, a)) {
            return None;
        }
        debug_assert!(self.oracle.q(s, better) > self.oracle.q(s, a));
        self.last_utterance = Some(t);
        self.window_start = n;
        self.utterances += 1;
        Some(Advice { anchor: t, better, worse: a })
    }

    pub fn state_at(&self, t: u64) -> Option<&PartialState> {
        self.history.get(t as usize)
    }
}

impl Teacher for Expert {
    fn answer_distinct_variable(&mut self, ta: u64, tb: u64) -> Result<VarId, ExpertError> {
        let sa = self.history.get(ta as usize).ok_or(ExpertError::UnknownStep(ta))?;
        let sb = self.history.get(tb as usize).ok_or(ExpertError::UnknownStep(tb))?;
        let differ: VarSet = self.oracle.model.vars.ids().filter(|&v| sa.get(v) != sb.get(v)).collect();
        let pick = differ.minus(self.known).iter().next().or_else(|| differ.iter().next());
        let z = pick.ok_or(ExpertError::IdenticalAnchors(ta, tb))?;
        self.known.insert(z);
        Ok(z)
    }

    fn answer_reward_scope(&mut self, known: VarSet) -> Result<VarId, ExpertError> {
        self.known = self.known.union(known);
        let z = self.oracle.reward_scope.minus(known).iter().next().ok_or(ExpertError::ScopeComplete)?;
        self.known.insert(z);
        Ok(z)
    }
}
