use rand::{Rng, RngCore};

use super::{Environment, StepResult};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Observation, Offsets};
use crate::mdp::{FiniteMdp, Outcome, TabularPolicy};

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;

const MAP: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];

/// 4×4 FrozenLake with slippery moves: the intended direction and both perpendicular ones
/// each happen with probability 1/3. No step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLake {
    pub gamma: f64,
    cells: Vec<u8>,
    position: usize,
    done: bool,
}

impl Default for FrozenLake {
    fn default() -> Self {
        Self::new()
    }
}

impl FrozenLake {
    pub const SIZE: usize = 4;

    pub fn new() -> Self {
        let cells = MAP.iter().flat_map(|row| row.bytes()).collect();
        Self { gamma: 0.95, cells, position: 0, done: true }
    }

    pub fn n_states(&self) -> usize {
        self.cells.len()
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        matches!(self.cells[s], b'H' | b'G')
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Cell reached by moving in `dir` from `s`; walls keep the agent in place.
    pub fn moved(s: usize, dir: usize) -> usize {
        let (r, c) = (s / Self::SIZE, s % Self::SIZE);
        let (r, c) = match dir {
            LEFT => (r, c.saturating_sub(1)),
            DOWN => ((r + 1).min(Self::SIZE - 1), c),
            RIGHT => (r, (c + 1).min(Self::SIZE - 1)),
            _ => (r.saturating_sub(1), c),
        };
        r * Self::SIZE + c
    }

    /// The three directions a slippery move can take: left of intended, intended, right of intended.
    pub fn slip_directions(action: usize) -> [usize; 3] {
        [(action + 3) % 4, action, (action + 1) % 4]
    }

    fn reward(&self, s: usize) -> f64 {
        if self.cells[s] == b'G' {
            1.0
        } else {
            0.0
        }
    }

    pub fn observation(s: usize) -> Observation {
        Observation {
            state: Some(s),
            point: vec![(s / Self::SIZE) as f64 + 0.5, (s % Self::SIZE) as f64 + 0.5],
        }
    }

    /// Four tilings of one-cell tiles over the grid, evenly offset.
    pub fn default_features() -> FeatureMap {
        FeatureMap::tile_coding(vec![(0.0, 4.0), (0.0, 4.0)], 4, 4, Offsets::Even)
            .expect("valid tile coder")
    }

    pub fn as_finite_mdp(&self) -> FiniteMdp {
        let n = self.n_states();
        let mut tr = vec![vec![Vec::new(); 4]; n];
        for (s, row) in tr.iter_mut().enumerate() {
            if self.is_terminal(s) {
                continue;
            }
            for (a, outs) in row.iter_mut().enumerate() {
                for dir in Self::slip_directions(a) {
                    let next = Self::moved(s, dir);
                    match outs.iter_mut().find(|o: &&mut Outcome| o.next == next) {
                        Some(o) => o.prob += 1.0 / 3.0,
                        None => outs.push(Outcome { next, reward: self.reward(next), prob: 1.0 / 3.0 }),
                    }
                }
            }
        }
        let mut d0 = vec![0.0; n];
        d0[0] = 1.0;
        let terminal = (0..n).map(|s| self.is_terminal(s)).collect();
        FiniteMdp::new(tr, d0, terminal).expect("FrozenLake is a valid MDP")
    }

    pub fn behavior_policy(mdp: &FiniteMdp) -> TabularPolicy {
        TabularPolicy::uniform(mdp)
    }

    /// South and east with probability 0.3 each, north and west with 0.2.
    pub fn target_policy(mdp: &FiniteMdp) -> TabularPolicy {
        let mut dist = [0.0; 4];
        dist[LEFT] = 0.2;
        dist[DOWN] = 0.3;
        dist[RIGHT] = 0.3;
        dist[UP] = 0.2;
        TabularPolicy::state_independent(mdp, &dist).expect("valid policy")
    }
}

impl Environment for FrozenLake {
    fn n_actions(&self) -> usize {
        4
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Observation {
        self.position = 0;
        self.done = false;
        Self::observation(0)
    }

    fn step(&mut self, action: usize, rng: &mut dyn RngCore) -> Result<StepResult> {
        if self.done {
            return Err(Error::EnvTerminated);
        }
        let dir = Self::slip_directions(action)[rng.gen_range(0..3)];
        let next = Self::moved(self.position, dir);
        self.position = next;
        self.done = self.is_terminal(next);
        Ok(StepResult {
            obs: Self::observation(next),
            reward: self.reward(next),
            terminal: self.done,
            gamma_next: if self.done { 0.0 } else { self.gamma },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_sums_to_one() {
        let env = FrozenLake::new();
        let mdp = env.as_finite_mdp();
        assert_eq!(mdp.n_states(), 16);
        let terminals: Vec<usize> = (0..16).filter(|&s| mdp.is_terminal(s)).collect();
        assert_eq!(terminals, vec![5, 7, 11, 12, 15]);
        for s in (0..16).filter(|&s| !mdp.is_terminal(s)) {
            for a in 0..4 {
                let total: f64 = mdp.outcomes(s, a).iter().map(|o| o.prob).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(mdp.expected_reward(14, RIGHT), 1.0 / 3.0);
    }

    #[test]
    fn features_have_four_active() {
        let f = FrozenLake::default_features();
        assert_eq!(f.dimension(), 64);
        for s in 0..16 {
            let x = f.encode(&FrozenLake::observation(s)).unwrap();
            assert_eq!(x.iter().sum::<f64>(), 4.0);
        }
    }
}
