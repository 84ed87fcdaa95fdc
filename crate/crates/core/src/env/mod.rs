//! Benchmark environments: random-walk RingWorld, slippery FrozenLake and noisy MountainCar.

mod frozenlake;
mod mountaincar;
mod ringworld;

pub use frozenlake::FrozenLake;
pub use mountaincar::{mountain_car_dynamics, NoisyMountainCar};
pub use ringworld::RingWorld;

use rand::RngCore;

use crate::error::Result;
use crate::features::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub terminal: bool,
    pub gamma_next: f64,
}

pub trait Environment {
    fn n_actions(&self) -> usize;
    /// Discount of non-terminal states.
    fn gamma(&self) -> f64;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation;
    /// Fails with `Error::EnvTerminated` once the episode has ended.
    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult>;
}
