//! Post-training laboratory for language policies that predict and explain
//! human risky choice: problem rendering and targets, completion parsing,
//! outcome rewards, group-relative policy optimization on a differentiable toy
//! policy, remote-model drivers, chain-of-thought analytics and the
//! pairwise human-evaluation service.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parsing;
pub mod policy;
pub mod prompts;
pub mod rewards;
pub mod service;
pub mod training;

pub use error::{Error, Result};
