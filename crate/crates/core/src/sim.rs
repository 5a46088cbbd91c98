//! One replica: environment, expert and agent stepped together.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::agent::{Agent, AgentError, AgentParams};
use crate::env::{observe, Env, EnvError};
use crate::expert::{Advice, Expert, ExpertParams, Oracle};
use crate::model::{ActionId, ActionSet, Awareness, PartialState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Conservative updates on discovery.
    Default,
    /// Restart learning on every discovery.
    NonConservative,
    /// ε-greedy in the optimal policy; no learning.
    TruePolicy,
    /// Uniform over all actions; no learning.
    Random,
}

impl Variant {
    pub fn learns(self) -> bool {
        matches!(self, Variant::Default | Variant::NonConservative)
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub variant: Variant,
    pub agent: AgentParams,
    pub expert: ExpertParams,
    pub initial: Awareness,
    /// Hard episode length cap; the episode is reset after this many steps.
    pub cutoff: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub episode: u64,
    /// True state the action was taken in.
    pub state: PartialState,
    pub action: ActionId,
    /// True successor state, before any reset.
    pub next: PartialState,
    /// Advice the expert gave after this step.
    pub advice: Option<Advice>,
    pub reward: f64,
    pub err_approx: f64,
    pub vars_aware: usize,
    pub actions_aware: usize,
    pub advice_count: u64,
    pub query_count: u64,
    pub terminal: bool,
    /// The episode was reset by the length cap after this step.
    pub cutoff: bool,
}

pub struct Simulation<R> {
    config: SimConfig,
    env: Env<R>,
    expert: Expert,
    agent: Agent,
    rng: R,
    t: u64,
}

impl<R: Rng> Simulation<R> {
    pub fn new(
        oracle: Arc<Oracle>,
        starts: Arc<Vec<PartialState>>,
        config: SimConfig,
        env_rng: R,
        agent_rng: R,
    ) -> Result<Self, SimError> {
        let model = oracle.model.clone();
        let mut env = Env::new(model.clone(), starts, env_rng)?;
        let mut expert = Expert::new(oracle, config.expert);
        let agent = Agent::new(&model.vars, config.initial.clone(), model.discount, config.agent);
        let s0 = env.reset().clone();
        expert.begin_episode(&s0);
        Ok(Simulation { config, env, expert, agent, rng: agent_rng, t: 0 })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn expert(&self) -> &Expert {
        &self.expert
    }

    pub fn env(&self) -> &Env<R> {
        &self.env
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn all_actions(&self) -> ActionSet {
        self.env.model().action_ids().collect()
    }

    /// Awareness reported for the variant: learners report their own, the optimal
    /// policy knows everything, the random policy keeps the initial sets.
    pub fn awareness(&self) -> Awareness {
        match self.config.variant {
            Variant::TruePolicy => Awareness {
                variables: self.env.model().vars.all(),
                actions: self.all_actions(),
                reward_scope: self.env.model().reward_scope(),
            },
            Variant::Random => self.config.initial.clone(),
            _ => self.agent.awareness().clone(),
        }
    }

    /// Action distribution of the final greedy policy (ε = 0) at a complete state.
    pub fn policy_probs(&self, s: &PartialState) -> Vec<f64> {
        let n = self.env.model().num_actions();
        let mut p = alloc::vec![0.0; n];
        match self.config.variant {
            Variant::TruePolicy => p[self.expert.oracle().best_action(s).index()] = 1.0,
            Variant::Random => p.iter_mut().for_each(|x| *x = 1.0 / n as f64),
            _ => {
                let obs = observe(s, self.agent.awareness());
                p[self.agent.greedy_action(&obs).index()] = 1.0;
            }
        }
        p
    }

    /// One full iteration of the learning loop.
    pub fn step(&mut self) -> Result<StepMetrics, SimError> {
        let t = self.t;
        let s = self.env.state().clone();
        let m = self.env.step_in_episode();
        let n = self.env.episode();
        let variant = self.config.variant;

        let a = match variant {
            Variant::TruePolicy => {
                let all = self.all_actions();
                if self.rng.gen::<f64>() < self.config.agent.epsilon {
                    all.nth(self.rng.gen_range(0..all.len())).unwrap()
                } else {
                    self.expert.oracle().best_action(&s)
                }
            }
            Variant::Random => {
                let all = self.all_actions();
                all.nth(self.rng.gen_range(0..all.len())).unwrap()
            }
            _ => {
                let obs = observe(&s, self.agent.awareness());
                self.agent.record_observation(t, obs.clone());
                self.agent.select_action(&obs, &mut self.rng)
            }
        };

        let tr = self.env.step(a)?;
        if variant.learns() {
            let obs = self.agent.observation(t).unwrap().clone();
            let next_obs = observe(&tr.next, self.agent.awareness());
            self.agent.integrate_trial(&obs, a, &next_obs, tr.reward, tr.terminal, &mut self.expert)?;
        }
        self.expert.record_step(t, &s, &tr.next, tr.reward, tr.terminal);
        let mut advice = None;
        if variant.learns() {
            advice = self.expert.monitor(t, m, n, &s, a);
            if let Some(adv) = advice {
                self.agent.handle_advice(adv, &mut self.expert)?;
            }
            self.agent.plan()?;
        }
        let err_approx = self.expert.err_all();

        let cutoff = !tr.terminal && m + 1 >= self.config.cutoff;
        if tr.terminal || cutoff {
            if cutoff {
                self.expert.end_episode();
            }
            let s0 = self.env.reset().clone();
            self.expert.begin_episode(&s0);
        }
        self.t += 1;
        let aw = self.awareness();
        Ok(StepMetrics {
            step: t,
            episode: n,
            state: s,
            action: a,
            next: tr.next,
            advice,
            reward: tr.reward,
            err_approx,
            vars_aware: aw.variables.len(),
            actions_aware: aw.actions.len(),
            advice_count: self.agent.advice_count(),
            query_count: self.agent.query_count(),
            terminal: tr.terminal,
            cutoff,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
