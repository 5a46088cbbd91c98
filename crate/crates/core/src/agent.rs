//! The learner: acting, trial integration, advice handling and adaptation to new variables.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::expert::{Advice, ExpertError, Teacher};
use crate::induction::{CpdLearner, FactOutcome, LabelTree, RewardLearner};
use crate::model::{ActionId, Awareness, PartialState, VarId, VarSet, VarTable};
use crate::structure::{AlphaSource, ParentPosterior, Repack};
use crate::svi::{inc_svi, ActionModel, PlanningProblem, SviError, ValueModel};
use crate::tree::Tree;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Svi(#[from] SviError),
    #[error("variable {0:?} is already known")]
    DuplicateDiscovery(VarId),
    #[error("action {0:?} is already known")]
    DuplicateAction(ActionId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentParams {
    pub epsilon: f64,
    pub rho: f64,
    pub k: f64,
    pub max_in_degree: usize,
    /// False for the variant that restarts learning on every discovery.
    pub conservative: bool,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams { epsilon: 0.1, rho: 0.1, k: 5.0, max_in_degree: 5, conservative: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdviceFact {
    /// The advised action exists.
    ActionExists(ActionId),
    /// At the anchored state, `better` has a higher optimal Q value than `worse`.
    Preference { anchor: u64, better: ActionId, worse: ActionId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DefeasibleEntry {
    pub action: ActionId,
    pub worse: ActionId,
    pub anchor: u64,
}

#[derive(Clone, Debug, Default)]
pub struct AdviceStore {
    pub facts: Vec<AdviceFact>,
    defeasible: BTreeMap<PartialState, DefeasibleEntry>,
}

impl AdviceStore {
    pub fn lookup(&self, key: &PartialState) -> Option<&DefeasibleEntry> {
        self.defeasible.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PartialState, &DefeasibleEntry)> {
        self.defeasible.iter()
    }

    pub fn len(&self) -> usize {
        self.defeasible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defeasible.is_empty()
    }
}

#[derive(Clone, Debug)]
struct Family {
    posterior: ParentPosterior,
    cpd: CpdLearner,
}

#[derive(Clone, Debug)]
struct ActionLearner {
    families: BTreeMap<VarId, Family>,
    trials: Vec<(PartialState, PartialState)>,
    model: ActionModel,
}

/// A learner of the true FMDP starting from partial awareness.
#[derive(Clone, Debug)]
pub struct Agent {
    params: AgentParams,
    vars: VarTable,
    cards: Vec<usize>,
    awareness: Awareness,
    learners: BTreeMap<ActionId, ActionLearner>,
    reward: RewardLearner,
    reward_tree: Tree<f64>,
    terminal: LabelTree<bool>,
    terminal_tree: Tree<bool>,
    values: ValueModel,
    advice: AdviceStore,
    history: Vec<PartialState>,
    advice_count: u64,
    query_count: u64,
    discount: f64,
}

impl Agent {
    pub fn new(vars: &VarTable, initial: Awareness, discount: f64, params: AgentParams) -> Self {
        let mut agent = Agent {
            params,
            vars: vars.clone(),
            cards: vars.cards(),
            reward: RewardLearner::new(initial.reward_scope, vars),
            reward_tree: Tree::Leaf(0.0),
            terminal: LabelTree::new(LabelTree::<bool>::tests_over(initial.variables, vars), false),
            terminal_tree: Tree::Leaf(false),
            awareness: initial.clone(),
            learners: BTreeMap::new(),
            values: ValueModel::zero(),
            advice: AdviceStore::default(),
            history: Vec::new(),
            advice_count: 0,
            query_count: 0,
            discount,
        };
        for a in initial.actions.iter() {
            let l = agent.fresh_learner();
            agent.learners.insert(a, l);
        }
        agent
    }

    fn fresh_learner(&self) -> ActionLearner {
        let mut families = BTreeMap::new();
        let mut model = ActionModel { cpds: alloc::vec![None; self.vars.len()] };
        for x in self.awareness.variables.iter() {
            let fam = self.fresh_family(x, AlphaSource::Uniform);
            model.cpds[x.index()] = Some(fam.cpd.tree().clone());
            families.insert(x, fam);
        }
        ActionLearner { families, trials: Vec::new(), model }
    }

    fn fresh_family(&self, x: VarId, alpha: AlphaSource) -> Family {
        let p = &self.params;
        let posterior = ParentPosterior::new(x, self.awareness.variables, p.rho, p.max_in_degree, alpha.clone(), &self.vars);
        let cpd = CpdLearner::new(x, posterior.map_parents(), &alpha, &self.vars);
        Family { posterior, cpd }
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn awareness(&self) -> &Awareness {
        &self.awareness
    }

    pub fn values(&self) -> &ValueModel {
        &self.values
    }

    pub fn reward_tree(&self) -> &Tree<f64> {
        &self.reward_tree
    }

    pub fn reward_learner(&self) -> &RewardLearner {
        &self.reward
    }

    pub fn terminal_tree(&self) -> &Tree<bool> {
        &self.terminal_tree
    }

    pub fn advice(&self) -> &AdviceStore {
        &self.advice
    }

    pub fn advice_count(&self) -> u64 {
        self.advice_count
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    pub fn cpd(&self, a: ActionId, x: VarId) -> Option<&Tree<crate::tree::Categorical>> {
        self.learners.get(&a)?.families.get(&x).map(|f| f.cpd.tree())
    }

    pub fn cpd_learner(&self, a: ActionId, x: VarId) -> Option<&CpdLearner> {
        self.learners.get(&a)?.families.get(&x).map(|f| &f.cpd)
    }

    pub fn parent_posterior(&self, a: ActionId, x: VarId) -> Option<&ParentPosterior> {
        self.learners.get(&a)?.families.get(&x).map(|f| &f.posterior)
    }

    pub fn trial_count(&self, a: ActionId) -> usize {
        self.learners.get(&a).map_or(0, |l| l.trials.len())
    }

    /// Observation made at the start of global step `t`.
    pub fn observation(&self, t: u64) -> Option<&PartialState> {
        self.history.get(t as usize)
    }

    /// Stores the observation of the state in which step `t` begins.
    pub fn record_observation(&mut self, t: u64, obs: PartialState) {
        debug_assert_eq!(self.history.len() as u64, t);
        self.history.push(obs);
    }

    /// Advice override, else greedy in the current Q trees (earliest action on ties).
    pub fn greedy_action(&self, obs: &PartialState) -> ActionId {
        let key = obs.project(self.awareness.variables);
        if let Some(e) = self.advice.lookup(&key) {
            return e.action;
        }
        let mut best: Option<(ActionId, f64)> = None;
        for a in self.awareness.actions.iter() {
            let q = self.values.q_value(a, obs);
            if best.map_or(true, |(_, b)| q > b) {
                best = Some((a, q));
            }
        }
        best.expect("no aware action").0
    }

    /// ε-greedy over the aware actions.
    pub fn select_action<R: Rng>(&self, obs: &PartialState, rng: &mut R) -> ActionId {
        let u: f64 = rng.gen();
        if u < self.params.epsilon {
            let n = self.awareness.actions.len();
            return self.awareness.actions.nth(rng.gen_range(0..n)).unwrap();
        }
        self.greedy_action(obs)
    }

    /// Learns from ⟨obs, a, next, reward, terminal⟩; may query the teacher about the reward scope.
    pub fn integrate_trial(
        &mut self,
        obs: &PartialState,
        a: ActionId,
        next: &PartialState,
        reward: f64,
        terminal: bool,
        teacher: &mut impl Teacher,
    ) -> Result<(), AgentError> {
        let vars = &self.vars;
        let learner = self.learners.get_mut(&a).expect("trial for an unknown action");
        learner.trials.push((obs.clone(), next.clone()));
        for (x, fam) in learner.families.iter_mut() {
            let xi = next.get(*x).expect("next observation misses an aware variable");
            if fam.posterior.update(obs, xi, vars) {
                let alpha = fam.posterior.alpha_source().clone();
                fam.cpd = CpdLearner::new(*x, fam.posterior.map_parents(), &alpha, vars);
                for (s, n) in &learner.trials {
                    fam.cpd.insert(s, n.get(*x).unwrap());
                }
            } else {
                fam.cpd.insert(obs, xi);
            }
            fam.cpd.restructure();
            learner.model.cpds[x.index()] = Some(fam.cpd.tree().clone());
        }

        self.terminal.insert(next.clone(), &terminal);
        self.terminal.restructure();
        self.terminal_tree = self.terminal.tree().reduce(&self.cards);

        let mut conflict = self.reward.update(next, reward) == FactOutcome::Inconsistent;
        while conflict {
            let z = teacher.answer_reward_scope(self.reward.scope())?;
            self.query_count += 1;
            if !self.awareness.variables.contains(z) {
                self.discover(z)?;
            }
            self.awareness.reward_scope.insert(z);
            let consistent = self.reward.expand_scope(z, &self.vars);
            conflict = !consistent
                || (next.assigns_all(self.reward.scope())
                    && self.reward.update(next, reward) == FactOutcome::Inconsistent);
        }
        self.reward_tree = self.reward.tree().reduce(&self.cards);
        Ok(())
    }

    /// Acts on better-action advice; a contradiction triggers the distinct-variable query.
    pub fn handle_advice(&mut self, adv: Advice, teacher: &mut impl Teacher) -> Result<(), AgentError> {
        self.advice_count += 1;
        self.advice.facts.push(AdviceFact::ActionExists(adv.better));
        self.advice.facts.push(AdviceFact::Preference { anchor: adv.anchor, better: adv.better, worse: adv.worse });
        if !self.awareness.actions.contains(adv.better) {
            self.add_action(adv.better)?;
        }
        let key = self
            .history
            .get(adv.anchor as usize)
            .expect("advice anchored at an unobserved step")
            .project(self.awareness.variables);
        match self.advice.defeasible.get(&key).copied() {
            Some(old) if old.action == adv.worse => {
                let z = teacher.answer_distinct_variable(old.anchor, adv.anchor)?;
                self.query_count += 1;
                self.advice.defeasible.remove(&key);
                if !self.awareness.variables.contains(z) {
                    self.discover(z)?;
                }
                self.rekey_advice();
            }
            _ => {
                self.advice
                    .defeasible
                    .insert(key, DefeasibleEntry { action: adv.better, worse: adv.worse, anchor: adv.anchor });
            }
        }
        Ok(())
    }

    fn rekey_advice(&mut self) {
        let old = core::mem::take(&mut self.advice.defeasible);
        for (_, e) in old {
            let key = self.history[e.anchor as usize].project(self.awareness.variables);
            self.advice.defeasible.insert(key, e);
        }
    }

    /// Adds a newly revealed action with a fresh DBN.
    pub fn add_action(&mut self, a: ActionId) -> Result<(), AgentError> {
        if !self.awareness.actions.insert(a) {
            return Err(AgentError::DuplicateAction(a));
        }
        if self.params.conservative {
            let l = self.fresh_learner();
            self.learners.insert(a, l);
        } else {
            self.reset_learning();
        }
        Ok(())
    }

    fn reset_learning(&mut self) {
        let actions: Vec<ActionId> = self.awareness.actions.iter().collect();
        self.learners.clear();
        for a in actions {
            let l = self.fresh_learner();
            self.learners.insert(a, l);
        }
        self.terminal = LabelTree::new(LabelTree::<bool>::tests_over(self.awareness.variables, &self.vars), false);
        self.terminal_tree = Tree::Leaf(false);
        self.values = ValueModel::zero();
    }

    /// Extends awareness with `z` and adapts the model; V and Q are left untouched.
    pub fn discover(&mut self, z: VarId) -> Result<(), AgentError> {
        if self.awareness.variables.contains(z) {
            return Err(AgentError::DuplicateDiscovery(z));
        }
        if !self.params.conservative {
            self.awareness.variables.insert(z);
            self.reset_learning();
            return Ok(());
        }
        let p = self.params;
        let all_states: Arc<Vec<PartialState>> =
            Arc::new(self.learners.values().flat_map(|l| l.trials.iter().map(|(s, _)| s.clone())).collect());
        let new_aware = self.awareness.variables.with(z);
        let actions: Vec<ActionId> = self.learners.keys().copied().collect();
        for a in actions {
            let learner = self.learners.get_mut(&a).unwrap();
            let states = if learner.trials.is_empty() {
                all_states.clone()
            } else {
                Arc::new(learner.trials.iter().map(|(s, _)| s.clone()).collect())
            };
            let mut families = BTreeMap::new();
            for (x, fam) in &learner.families {
                let repack = Repack::new(p.k, z, states.clone(), fam.cpd.tree().clone());
                let alpha = AlphaSource::Repacked(Arc::new(repack));
                let posterior = fam.posterior.rebuild_on_new_variable(z, p.rho, p.max_in_degree, alpha.clone(), &self.vars);
                let cpd = CpdLearner::new(*x, posterior.map_parents(), &alpha, &self.vars);
                families.insert(*x, Family { posterior, cpd });
            }
            let alpha = AlphaSource::Fresh { k: p.k, z };
            let posterior = ParentPosterior::new(z, new_aware, p.rho, p.max_in_degree, alpha.clone(), &self.vars);
            let cpd = CpdLearner::new(z, posterior.map_parents(), &alpha, &self.vars);
            families.insert(z, Family { posterior, cpd });
            let mut model = ActionModel { cpds: alloc::vec![None; self.vars.len()] };
            for (x, f) in &families {
                model.cpds[x.index()] = Some(f.cpd.tree().clone());
            }
            *learner = ActionLearner { families, trials: Vec::new(), model };
        }
        self.awareness.variables = new_aware;
        self.terminal.rebuild(LabelTree::<bool>::tests_over(new_aware, &self.vars), |_| true);
        self.terminal_tree = self.terminal.tree().reduce(&self.cards);
        Ok(())
    }

    /// One structured Bellman backup with the current model.
    pub fn plan(&mut self) -> Result<(), AgentError> {
        let actions: Vec<(ActionId, &ActionModel)> = self.learners.iter().map(|(a, l)| (*a, &l.model)).collect();
        let problem = PlanningProblem {
            cards: &self.cards,
            reward: &self.reward_tree,
            terminal: &self.terminal_tree,
            actions: &actions,
            discount: self.discount,
        };
        let mut vm = inc_svi(&problem, &self.values.v)?;
        vm.iterations = self.values.iterations + 1;
        self.values = vm;
        Ok(())
    }

    /// Every tree and candidate mentions only aware variables and actions.
    pub fn references_only_aware(&self) -> bool {
        let aware = self.awareness.variables;
        let ok_tree = |vs: VarSet| vs.is_subset(aware);
        self.learners.keys().all(|a| self.awareness.actions.contains(*a))
            && self.learners.values().all(|l| {
                l.families.iter().all(|(x, f)| {
                    aware.contains(*x)
                        && ok_tree(f.cpd.tree().tested_vars())
                        && f.posterior.candidates().iter().all(|c| c.parents.is_subset(aware))
                })
            })
            && ok_tree(self.reward_tree.tested_vars())
            && ok_tree(self.terminal_tree.tested_vars())
            && ok_tree(self.values.v.tested_vars())
            && self.values.q.iter().all(|(a, q)| self.awareness.actions.contains(*a) && ok_tree(q.tested_vars()))
    }
}
