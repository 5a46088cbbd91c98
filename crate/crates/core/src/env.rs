//! Episodic simulation of the true FMDP.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::fmdp::Fmdp;
use crate::model::{ActionId, Awareness, PartialState};
use crate::tree::Categorical;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("empty start-state set")]
    EmptyStart,
    #[error("unknown action {0}")]
    UnknownAction(u8),
    #[error("step called on a terminal state without reset")]
    StepAfterTerminal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: PartialState,
    pub reward: f64,
    pub terminal: bool,
}

pub struct Env<R> {
    model: Arc<Fmdp>,
    starts: Arc<Vec<PartialState>>,
    state: PartialState,
    terminal: bool,
    /// Episodes started so far; the current one is `episode - 1`.
    episode: u64,
    step_in_episode: u64,
    global_step: u64,
    rng: R,
}

/// What the agent sees of a complete state.
pub fn observe(state: &PartialState, aw: &Awareness) -> PartialState {
    state.project(aw.variables)
}

pub fn sample_categorical<R: Rng>(dist: &Categorical, rng: &mut R) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.0.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i as u8;
            }
        }
    }
    last as u8
}

impl<R: Rng> Env<R> {
    pub fn new(model: Arc<Fmdp>, starts: Arc<Vec<PartialState>>, rng: R) -> Result<Self, EnvError> {
        if starts.is_empty() {
            return Err(EnvError::EmptyStart);
        }
        let n = model.num_vars();
        Ok(Env {
            model,
            starts,
            state: PartialState::empty(n),
            terminal: true,
            episode: 0,
            step_in_episode: 0,
            global_step: 0,
            rng,
        })
    }

    pub fn model(&self) -> &Fmdp {
        &self.model
    }

    /// Draws a start state uniformly and begins a new episode.
    pub fn reset(&mut self) -> &PartialState {
        let k = self.rng.gen_range(0..self.starts.len());
        self.state = self.starts[k].clone();
        self.terminal = false;
        self.episode += 1;
        self.step_in_episode = 0;
        &self.state
    }

    pub fn step(&mut self, a: ActionId) -> Result<Transition, EnvError> {
        if a.index() >= self.model.num_actions() {
            return Err(EnvError::UnknownAction(a.0));
        }
        if self.terminal {
            return Err(EnvError::StepAfterTerminal);
        }
        let mut next = PartialState::empty(self.model.num_vars());
        for x in self.model.vars.ids() {
            let dist = self.model.cpd(a, x).eval(&self.state);
            next.set(x, sample_categorical(dist, &mut self.rng));
        }
        let reward = *self.model.reward.eval(&next);
        let terminal = self.model.is_terminal(&next);
        self.state = next.clone();
        self.terminal = terminal;
        self.step_in_episode += 1;
        self.global_step += 1;
        Ok(Transition { next, reward, terminal })
    }

    pub fn state(&self) -> &PartialState {
        &self.state
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Index of the current episode (0-based).
    pub fn episode(&self) -> u64 {
        self.episode.saturating_sub(1)
    }

    pub fn step_in_episode(&self) -> u64 {
        self.step_in_episode
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }
}
