//! Finite MDPs, tabular policies, state-based discounts and trajectory sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// One entry of the four-argument dynamics p(s', r | s, a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: usize,
    pub reward: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<Vec<Outcome>>>,
    initial: Vec<f64>,
    terminal: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransitionRecord {
    s: usize,
    a: usize,
    #[serde(rename = "s'", alias = "s_next")]
    s_next: usize,
    r: f64,
    p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpFile {
    states: usize,
    actions: usize,
    transitions: Vec<TransitionRecord>,
    d0: Vec<f64>,
    terminal: Vec<bool>,
}

impl FiniteMdp {
    /// Builds and validates an MDP. `transitions[s][a]` lists the outcomes of taking `a` in `s`;
    /// rows of terminal states are ignored and may be empty.
    pub fn new(
        transitions: Vec<Vec<Vec<Outcome>>>,
        initial: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
        }
        if initial.len() != n_states || terminal.len() != n_states {
            return Err(Error::InvalidMdp(format!(
                "d0 has {} entries and terminal has {}, expected {}",
                initial.len(),
                terminal.len(),
                n_states
            )));
        }
        for (s, row) in transitions.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            if terminal[s] {
                continue;
            }
            for (a, outs) in row.iter().enumerate() {
                let mut total = 0.0;
                for o in outs {
                    if o.next >= n_states {
                        return Err(Error::InvalidMdp(format!(
                            "({s},{a}) leads to unknown state {}",
                            o.next
                        )));
                    }
                    if !(0.0..=1.0).contains(&o.prob) || !o.reward.is_finite() {
                        return Err(Error::InvalidMdp(format!("({s},{a}) has a bad outcome {o:?}")));
                    }
                    total += o.prob;
                }
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "probabilities of ({s},{a}) sum to {total}"
                    )));
                }
            }
        }
        let mut mass = 0.0;
        for (s, &p) in initial.iter().enumerate() {
            if p < 0.0 {
                return Err(Error::InvalidMdp(format!("d0({s}) is negative")));
            }
            if terminal[s] && p > 0.0 {
                return Err(Error::InvalidMdp(format!("d0 puts mass on terminal state {s}")));
            }
            mass += p;
        }
        if (mass - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("d0 sums to {mass}")));
        }
        Ok(Self { n_states, n_actions, transitions, initial, terminal })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        let mut transitions = vec![vec![Vec::new(); file.actions]; file.states];
        for t in &file.transitions {
            if t.s >= file.states || t.a >= file.actions {
                return Err(Error::InvalidMdp(format!("transition ({}, {}) out of range", t.s, t.a)));
            }
            transitions[t.s][t.a].push(Outcome { next: t.s_next, reward: t.r, prob: t.p });
        }
        Self::new(transitions, file.d0, file.terminal)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let mut records = Vec::new();
        for (s, row) in self.transitions.iter().enumerate() {
            for (a, outs) in row.iter().enumerate() {
                for o in outs {
                    records.push(TransitionRecord { s, a, s_next: o.next, r: o.reward, p: o.prob });
                }
            }
        }
        let file = MdpFile {
            states: self.n_states,
            actions: self.n_actions,
            transitions: records,
            d0: self.initial.clone(),
            terminal: self.terminal.clone(),
        };
        serde_json::to_string_pretty(&file).expect("MDP serialization cannot fail")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.transitions[s][a]
    }

    /// Three-argument marginal p(s' | s, a) as a dense row.
    pub fn next_state_probs(&self, s: usize, a: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_states];
        for o in &self.transitions[s][a] {
            p[o.next] += o.prob;
        }
        p
    }

    /// Expected immediate reward r(s, a).
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transitions[s][a].iter().map(|o| o.prob * o.reward).sum()
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial, rng)
    }

    /// Draws (s', r) from p(·,·|s,a).
    pub fn sample_outcome<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        let outs = &self.transitions[s][a];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for o in outs {
            acc += o.prob;
            if u < acc {
                return (o.next, o.reward);
            }
        }
        let last = outs.iter().rev().find(|o| o.prob > 0.0).unwrap_or(&outs[outs.len() - 1]);
        (last.next, last.reward)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(mdp: &FiniteMdp, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != mdp.n_states() {
            return Err(Error::InvalidPolicy(format!(
                "{} rows for {} states",
                probs.len(),
                mdp.n_states()
            )));
        }
        for (s, row) in probs.iter().enumerate() {
            if row.len() != mdp.n_actions() {
                return Err(Error::InvalidPolicy(format!("row {s} has {} entries", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative entry")));
            }
            if !mdp.is_terminal(s) {
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
                }
            }
        }
        Ok(Self { probs })
    }

    /// Same action distribution in every state.
    pub fn state_independent(mdp: &FiniteMdp, dist: &[f64]) -> Result<Self> {
        Self::new(mdp, vec![dist.to_vec(); mdp.n_states()])
    }

    pub fn uniform(mdp: &FiniteMdp) -> Self {
        let n = mdp.n_actions();
        Self { probs: vec![vec![1.0 / n as f64; n]; mdp.n_states()] }
    }

    pub fn load(mdp: &FiniteMdp, path: impl AsRef<Path>) -> Result<Self> {
        let probs: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(mdp, probs)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(&self.probs[s], rng)
    }
}

/// Per-state discount γ(s); terminal states always carry 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountFunction {
    pub gamma: Vec<f64>,
}

impl DiscountFunction {
    pub fn new(mdp: &FiniteMdp, mut gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != mdp.n_states() {
            return Err(Error::ShapeMismatch { expected: mdp.n_states(), got: gamma.len() });
        }
        for (s, g) in gamma.iter_mut().enumerate() {
            if !(0.0..=1.0).contains(g) {
                return Err(Error::InvalidDiscount(format!("gamma({s}) = {g}")));
            }
            if mdp.is_terminal(s) {
                *g = 0.0;
            }
        }
        Ok(Self { gamma })
    }

    pub fn constant(mdp: &FiniteMdp, g: f64) -> Result<Self> {
        Self::new(mdp, vec![g; mdp.n_states()])
    }

    pub fn at(&self, s: usize) -> f64 {
        self.gamma[s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub gamma_next: f64,
    pub rho: f64,
}

pub fn importance_ratio(
    target: &TabularPolicy,
    behavior: &TabularPolicy,
    s: usize,
    a: usize,
) -> Result<f64> {
    let b = behavior.prob(s, a);
    if b <= 0.0 {
        return Err(Error::ZeroBehaviorProbability { state: s, action: a });
    }
    Ok(target.prob(s, a) / b)
}

/// Samples one episode from d0 under `behavior`, stopping on terminal entry or after `max_steps`.
pub fn sample_episode(
    mdp: &FiniteMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    gamma: &DiscountFunction,
    rng_seed: u64,
    max_steps: Option<usize>,
) -> Result<Vec<Transition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_episode_with(mdp, behavior, target, gamma, &mut rng, max_steps)
}

pub fn sample_episode_with<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    gamma: &DiscountFunction,
    rng: &mut R,
    max_steps: Option<usize>,
) -> Result<Vec<Transition>> {
    let mut episode = Vec::new();
    let mut s = mdp.sample_initial(rng);
    let limit = max_steps.unwrap_or(usize::MAX);
    while !mdp.is_terminal(s) && episode.len() < limit {
        if let Some(a) = (0..mdp.n_actions()).find(|&a| behavior.prob(s, a) <= 0.0 && target.prob(s, a) > 0.0) {
            return Err(Error::AbsoluteContinuity { state: s, action: a });
        }
        let a = behavior.sample(s, rng);
        let rho = importance_ratio(target, behavior, s, a)?;
        let (s_next, r) = mdp.sample_outcome(s, a, rng);
        episode.push(Transition { s, a, r, s_next, gamma_next: gamma.at(s_next), rho });
        s = s_next;
    }
    Ok(episode)
}

/// Fails with the first (s, a) where the target acts but the behavior never does.
pub fn check_coverage(mdp: &FiniteMdp, behavior: &TabularPolicy, target: &TabularPolicy) -> Result<()> {
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..mdp.n_actions() {
            if behavior.prob(s, a) <= 0.0 && target.prob(s, a) > 0.0 {
                return Err(Error::AbsoluteContinuity { state: s, action: a });
            }
        }
    }
    Ok(())
}
