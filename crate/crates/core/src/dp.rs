//! Exact policy evaluation, on-policy state frequencies and the overall value error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DiscountFunction, FiniteMdp, TabularPolicy};

pub const DEFAULT_THETA: f64 = 1e-12;
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrequency {
    pub d: Vec<f64>,
}

/// P_pi and r_pi. Rows of terminal states are zero.
pub fn policy_matrices(mdp: &FiniteMdp, policy: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let n = mdp.n_states();
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in (0..n).filter(|&s| !mdp.is_terminal(s)) {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for o in mdp.outcomes(s, a) {
                p[(s, o.next)] += pa * o.prob;
                r[s] += pa * o.prob * o.reward;
            }
        }
    }
    (p, r)
}

/// P_pi with terminal rows replaced by d0, the chain whose stationary law is the on-policy distribution.
pub fn augmented_transition(mdp: &FiniteMdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let (mut p, _) = policy_matrices(mdp, policy);
    for s in (0..mdp.n_states()).filter(|&s| mdp.is_terminal(s)) {
        for j in 0..mdp.n_states() {
            p[(s, j)] = mdp.initial()[j];
        }
    }
    p
}

/// States whose values are not pinned down because discounting never leaks from them.
fn non_leaking_states(p: &DMatrix<f64>, gamma: &DiscountFunction, terminal: &[bool]) -> Vec<usize> {
    let n = p.nrows();
    let leaks: Vec<bool> = (0..n)
        .map(|s| {
            let kept: f64 = (0..n).map(|j| p[(s, j)] * gamma.at(j)).sum();
            terminal[s] || kept < 1.0 - 1e-12
        })
        .collect();
    let mut reach = leaks.clone();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !reach[s] && (0..n).any(|j| p[(s, j)] > 0.0 && reach[j]) {
                reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&s| !reach[s]).collect()
}

/// Solves (I - P_pi Gamma) v = r_pi by LU with partial pivoting.
pub fn solve_values_direct(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    gamma: &DiscountFunction,
) -> Result<ValueVector> {
    let n = mdp.n_states();
    let (p, r) = policy_matrices(mdp, policy);
    let stuck = non_leaking_states(&p, gamma, mdp.terminal());
    if !stuck.is_empty() {
        return Err(Error::Singular(format!(
            "I - P_pi Gamma is singular: states {stuck:?} never terminate or discount"
        )));
    }
    let g = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|s| gamma.at(s))));
    let a = DMatrix::identity(n, n) - &p * g;
    let lu = a.lu();
    let v = lu
        .solve(&r)
        .ok_or_else(|| Error::Singular("LU factorization hit a zero pivot".into()))?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    let mut v: Vec<f64> = v.iter().copied().collect();
    for s in (0..n).filter(|&s| mdp.is_terminal(s)) {
        v[s] = 0.0;
    }
    Ok(ValueVector { v })
}

/// Synchronous sweeps v <- r_pi + P_pi Gamma v from v = 0 until the sup-norm change is below theta.
pub fn solve_values_iterative(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    gamma: &DiscountFunction,
    theta: f64,
    max_sweeps: usize,
) -> Result<ValueVector> {
    if !(theta > 0.0) {
        return Err(Error::Config(format!("theta must be positive, got {theta}")));
    }
    let n = mdp.n_states();
    let (p, r) = policy_matrices(mdp, policy);
    let pg = DMatrix::from_fn(n, n, |i, j| p[(i, j)] * gamma.at(j));
    let mut v = DVector::zeros(n);
    let mut delta = f64::INFINITY;
    for _ in 0..max_sweeps {
        let next = &r + &pg * &v;
        delta = (&next - &v).amax();
        v = next;
        if delta < theta {
            return Ok(ValueVector { v: v.iter().copied().collect() });
        }
    }
    Err(Error::NotConverged { iterations: max_sweeps, delta })
}

/// Expected visit counts within an episode, normalized; terminal entries are zero.
pub fn solve_state_frequencies(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    theta: f64,
    max_iters: usize,
) -> Result<StateFrequency> {
    let n = mdp.n_states();
    let (p, _) = policy_matrices(mdp, policy);
    let pt = p.transpose();
    let zero_terminal = |x: &mut DVector<f64>| {
        for s in (0..n).filter(|&s| mdp.is_terminal(s)) {
            x[s] = 0.0;
        }
    };
    let mut d = DVector::from_column_slice(mdp.initial());
    let mut step = d.clone();
    zero_terminal(&mut step);
    let mut iters = 0;
    while step.lp_norm(1) >= theta {
        if iters >= max_iters {
            return Err(Error::NonTerminating(format!(
                "visit mass {:e} still above {theta:e} after {max_iters} iterations",
                step.lp_norm(1)
            )));
        }
        step = &pt * &step;
        d += &step;
        zero_terminal(&mut step);
        iters += 1;
    }
    zero_terminal(&mut d);
    let total = d.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonTerminating("no visit mass".into()));
    }
    Ok(StateFrequency { d: d.iter().map(|x| x / total).collect() })
}

/// ½ Σ_s d(s) (V(s) - v(s))².
pub fn overall_value_error(estimate: &[f64], v_true: &ValueVector, d: &StateFrequency) -> Result<f64> {
    let n = v_true.v.len();
    for len in [estimate.len(), d.d.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, got: len });
        }
    }
    Ok(estimate
        .iter()
        .zip(&v_true.v)
        .zip(&d.d)
        .map(|((e, t), w)| 0.5 * w * (e - t) * (e - t))
        .sum())
}

/// Residual ‖v - (r_pi + P_pi Gamma v)‖∞.
pub fn bellman_residual(
    mdp: &FiniteMdp,
    policy: &TabularPolicy,
    gamma: &DiscountFunction,
    v: &ValueVector,
) -> f64 {
    let n = mdp.n_states();
    let (p, r) = policy_matrices(mdp, policy);
    (0..n)
        .filter(|&s| !mdp.is_terminal(s))
        .map(|s| {
            let backup = r[s] + (0..n).map(|j| p[(s, j)] * gamma.at(j) * v.v[j]).sum::<f64>();
            (v.v[s] - backup).abs()
        })
        .fold(0.0, f64::max)
}

/// ‖d̃ᵀP̃ - d̃ᵀ‖∞ for the d0-augmented chain. `d` carries no terminal mass, so terminal
/// entries are restored from the one-step inflow dᵀP before checking, then renormalized.
pub fn frequency_residual(mdp: &FiniteMdp, policy: &TabularPolicy, d: &StateFrequency) -> f64 {
    let (p, _) = policy_matrices(mdp, policy);
    let mut full = DVector::from_column_slice(&d.d);
    let inflow = p.transpose() * &full;
    for s in (0..mdp.n_states()).filter(|&s| mdp.is_terminal(s)) {
        full[s] = inflow[s];
    }
    let total = full.sum();
    full /= total;
    let pt = augmented_transition(mdp, policy);
    (pt.transpose() * &full - &full).amax()
}
