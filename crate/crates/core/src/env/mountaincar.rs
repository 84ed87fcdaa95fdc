use rand::{Rng, RngCore};

use super::{Environment, StepResult};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Observation, Offsets};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.5;
pub const MAX_SPEED: f64 = 0.07;

/// Deterministic MountainCar physics for action a ∈ {0, 1, 2} (reverse, coast, forward).
pub fn mountain_car_dynamics(position: f64, velocity: f64, action: usize) -> (f64, f64) {
    let mut v = velocity + 0.001 * (action as f64 - 1.0) - 0.0025 * (3.0 * position).cos();
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    let mut p = (position + v).clamp(MIN_POSITION, MAX_POSITION);
    if p <= MIN_POSITION && v < 0.0 {
        p = MIN_POSITION;
        v = 0.0;
    }
    (p, v)
}

/// MountainCar where each action is replaced by a uniformly random one with probability
/// `noise_prob`, episodes start anywhere on the slopes at rest, and there is no step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMountainCar {
    pub noise_prob: f64,
    pub gamma: f64,
    pub position: f64,
    pub velocity: f64,
    done: bool,
}

impl Default for NoisyMountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl NoisyMountainCar {
    pub fn new() -> Self {
        Self { noise_prob: 0.2, gamma: 1.0, position: -0.5, velocity: 0.0, done: true }
    }

    pub fn observation(&self) -> Observation {
        Observation::continuous(vec![self.position, self.velocity])
    }

    /// 8 evenly offset tilings of 8×8 tiles over (position, velocity).
    pub fn default_features() -> FeatureMap {
        FeatureMap::tile_coding(
            vec![(MIN_POSITION, MAX_POSITION), (-MAX_SPEED, MAX_SPEED)],
            8,
            8,
            Offsets::Even,
        )
        .expect("valid tile coder")
    }
}

impl Environment for NoisyMountainCar {
    fn n_actions(&self) -> usize {
        3
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        self.position = rng.gen_range(MIN_POSITION..MAX_POSITION);
        self.velocity = 0.0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult> {
        if self.done {
            return Err(Error::EnvTerminated);
        }
        let action = if rng.gen::<f64>() < self.noise_prob { rng.gen_range(0..3) } else { action };
        let (p, v) = mountain_car_dynamics(self.position, self.velocity, action);
        self.position = p;
        self.velocity = v;
        self.done = p >= MAX_POSITION;
        Ok(StepResult {
            obs: self.observation(),
            reward: -1.0,
            terminal: self.done,
            gamma_next: if self.done { 0.0 } else { self.gamma },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn throttle_right_from_rest() {
        let (p, v) = mountain_car_dynamics(-0.5, 0.0, 2);
        let expect = 0.001 - 0.0025 * (-1.5f64).cos();
        assert!((v - expect).abs() < 1e-15);
        assert!((p - (-0.5 + expect)).abs() < 1e-15);
    }

    #[test]
    fn left_wall_stops_car() {
        let (p, v) = mountain_car_dynamics(-1.19, -0.07, 0);
        assert_eq!((p, v), (MIN_POSITION, 0.0));
    }

    #[test]
    fn episode_rewards_and_termination() {
        let mut env = NoisyMountainCar::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        env.reset(&mut rng);
        env.position = 0.49;
        env.velocity = 0.05;
        let out = env.step(2, &mut rng).unwrap();
        assert_eq!((out.reward, out.terminal, out.gamma_next), (-1.0, true, 0.0));
        assert!(matches!(env.step(2, &mut rng), Err(Error::EnvTerminated)));
    }

    #[test]
    fn starts_on_slopes_at_rest() {
        let mut env = NoisyMountainCar::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            env.reset(&mut rng);
            assert!((MIN_POSITION..MAX_POSITION).contains(&env.position));
            assert_eq!(env.velocity, 0.0);
        }
    }
}
