//! Learning factored MDPs when the learner starts unaware of some variables and actions.
//!
//! The agent learns DBN structure and CPD trees from trials, plans with structured
//! value iteration, and grows its vocabulary through advice and queries from an
//! expert who knows the true model.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod env;
pub mod expert;
pub mod fmdp;
pub mod induction;
pub mod math;
pub mod model;
pub mod sim;
pub mod structure;
pub mod svi;
pub mod tree;

pub use agent::{Agent, AgentParams};
pub use expert::{Expert, ExpertParams, Oracle};
pub use fmdp::{Fmdp, Predicate};
pub use model::{ActionId, Awareness, PartialState, VarId, VarSet, VarTable};
pub use sim::{SimConfig, Simulation, StepMetrics, Variant};
pub use tree::{Categorical, Tree};
