use rand::RngCore;

use super::{Environment, StepResult};
use crate::error::{Error, Result};
use crate::features::Observation;
use crate::mdp::{FiniteMdp, Outcome, TabularPolicy};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Random walk over `n` non-terminal states with terminals at both ends. State 0 is the left
/// terminal (reward −1 on entry), state n + 1 the right one (reward +1).
#[derive(Debug, Clone, PartialEq)]
pub struct RingWorld {
    pub n: usize,
    pub gamma: f64,
    position: usize,
    done: bool,
}

impl RingWorld {
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 || n % 2 == 0 {
            return Err(Error::Config(format!("RingWorld needs an odd number of states, got {n}")));
        }
        Ok(Self { n, gamma: 0.95, position: n / 2 + 1, done: true })
    }

    pub fn start(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn n_states(&self) -> usize {
        self.n + 2
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn reward(&self, next: usize) -> f64 {
        if next == 0 {
            -1.0
        } else if next == self.n + 1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_finite_mdp(&self) -> FiniteMdp {
        let total = self.n_states();
        let mut tr = vec![vec![Vec::new(), Vec::new()]; total];
        for (s, row) in tr.iter_mut().enumerate().take(self.n + 1).skip(1) {
            for (a, next) in [(LEFT, s - 1), (RIGHT, s + 1)] {
                row[a].push(Outcome { next, reward: self.reward(next), prob: 1.0 });
            }
        }
        let mut d0 = vec![0.0; total];
        d0[self.start()] = 1.0;
        let mut terminal = vec![false; total];
        terminal[0] = true;
        terminal[total - 1] = true;
        FiniteMdp::new(tr, d0, terminal).expect("RingWorld is a valid MDP")
    }

    /// Goes left with probability `p_left` in every state.
    pub fn policy(mdp: &FiniteMdp, p_left: f64) -> Result<TabularPolicy> {
        TabularPolicy::state_independent(mdp, &[p_left, 1.0 - p_left])
    }
}

impl Environment for RingWorld {
    fn n_actions(&self) -> usize {
        2
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        self.position = self.start();
        self.done = false;
        Observation::tabular(self.position)
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<StepResult> {
        if self.done {
            return Err(Error::EnvTerminated);
        }
        let next = if action == LEFT { self.position - 1 } else { self.position + 1 };
        self.position = next;
        self.done = next == 0 || next == self.n + 1;
        Ok(StepResult {
            obs: Observation::tabular(next),
            reward: self.reward(next),
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
    fn left_exit() {
        let mut env = RingWorld::new(11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        let mut last = None;
        for _ in 0..6 {
            last = Some(env.step(LEFT, &mut rng).unwrap());
        }
        let last = last.unwrap();
        assert_eq!((last.reward, last.terminal, last.gamma_next), (-1.0, true, 0.0));
        assert!(matches!(env.step(LEFT, &mut rng), Err(Error::EnvTerminated)));
    }

    #[test]
    fn enumeration() {
        let mdp = RingWorld::new(11).unwrap().as_finite_mdp();
        assert_eq!(mdp.n_states(), 13);
        assert_eq!(mdp.terminal().iter().filter(|&&t| t).count(), 2);
        assert_eq!(mdp.initial()[6], 1.0);
        assert_eq!(mdp.outcomes(11, RIGHT)[0], Outcome { next: 12, reward: 1.0, prob: 1.0 });
        assert!(RingWorld::new(10).is_err());
    }
}
