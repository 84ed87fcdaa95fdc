//! Trace-based temporal-difference learning with online meta-learning of state-based λ.
//!
//! The crate covers exact dynamic-programming ground truth, linear value learners
//! (accumulating TD(λ), true online TD(λ), true online GTD(λ)), auxiliary learners for the
//! mean and variance of λ-returns, the META and λ-greedy adapters, benchmark environments,
//! actor-critic control and an experiment harness.

pub mod aux;
pub mod control;
pub mod dp;
pub mod env;
pub mod error;
pub mod features;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod meta;
pub mod record;

pub use error::{Error, Result};
