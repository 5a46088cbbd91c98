//! Domain files, configuration and experiment harness for the awareness-growing learner.

pub mod config;
pub mod domain;
pub mod harness;
