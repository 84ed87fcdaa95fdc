//! First-moment learners: Monte-Carlo, n-step and λ̄-returns, and the linear trace-based TD family.

use serde::{Deserialize, Serialize};

use crate::dp::ValueVector;
use crate::error::{Error, Result};
use crate::mdp::Transition;

/// |w|∞ beyond this aborts a run.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    /// Accumulating traces.
    TdLambda,
    TrueOnlineTd,
    TrueOnlineGtd,
}

/// Everything one online update needs. `gamma_t`/`lambda_t` belong to the state being updated,
/// `gamma_next`/`lambda_next` to the successor.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub x_t: &'a [f64],
    pub x_next: &'a [f64],
    pub r: f64,
    pub gamma_t: f64,
    pub gamma_next: f64,
    pub lambda_t: f64,
    pub lambda_next: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Linear value estimate with its traces. For the true-online learners `z` holds the
/// step-size-scaled dutch trace; for accumulating TD it is the plain trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLearner {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub v_old: f64,
    pub w_secondary: Vec<f64>,
    pub z_grad: Vec<f64>,
    pub z_secondary: Vec<f64>,
    pub rho_prev: f64,
    pub steps: u64,
    /// |w|∞ beyond this aborts the run. Learners of squared returns use the square of the default.
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
}

fn default_bound() -> f64 {
    DIVERGENCE_BOUND
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearLearner {
    pub fn new(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            z: vec![0.0; dim],
            v_old: 0.0,
            w_secondary: Vec::new(),
            z_grad: Vec::new(),
            z_secondary: Vec::new(),
            rho_prev: 1.0,
            steps: 0,
            divergence_bound: DIVERGENCE_BOUND,
        }
    }

    pub fn with_secondary(dim: usize) -> Self {
        Self {
            w_secondary: vec![0.0; dim],
            z_grad: vec![0.0; dim],
            z_secondary: vec![0.0; dim],
            ..Self::new(dim)
        }
    }

    pub fn for_kind(kind: LearnerKind, dim: usize) -> Self {
        match kind {
            LearnerKind::TrueOnlineGtd => Self::with_secondary(dim),
            _ => Self::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    pub fn reset_episode(&mut self) {
        self.z.iter_mut().for_each(|v| *v = 0.0);
        self.z_grad.iter_mut().for_each(|v| *v = 0.0);
        self.z_secondary.iter_mut().for_each(|v| *v = 0.0);
        self.v_old = 0.0;
        self.rho_prev = 1.0;
    }

    pub fn step(&mut self, kind: LearnerKind, ctx: &StepContext) -> Result<f64> {
        match kind {
            LearnerKind::TdLambda => td_lambda_step(self, ctx),
            LearnerKind::TrueOnlineTd => true_online_td_step(self, ctx),
            LearnerKind::TrueOnlineGtd => true_online_gtd_step(self, ctx),
        }
    }

    fn check(&mut self, ctx: &StepContext, delta: f64) -> Result<f64> {
        let step = self.steps;
        self.steps += 1;
        if ctx.x_t.len() != self.w.len() || ctx.x_next.len() != self.w.len() {
            return Err(Error::ShapeMismatch { expected: self.w.len(), got: ctx.x_t.len() });
        }
        if !delta.is_finite() {
            return Err(Error::Divergence { learner: "value".into(), step });
        }
        Ok(delta)
    }

    fn check_weights(&self) -> Result<()> {
        if self.w.iter().any(|v| !(v.abs() <= self.divergence_bound)) {
            return Err(Error::Divergence { learner: "value".into(), step: self.steps.saturating_sub(1) });
        }
        Ok(())
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(self).expect("learner serialization cannot fail")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Accumulating-trace TD(λ̄) with per-decision importance sampling:
/// z ← ρ(γ_t λ_t z + x_t), w ← w + α δ z.
pub fn td_lambda_step(l: &mut LinearLearner, ctx: &StepContext) -> Result<f64> {
    let delta = ctx.r + ctx.gamma_next * l.value(ctx.x_next) - l.value(ctx.x_t);
    let delta = l.check(ctx, delta)?;
    let decay = ctx.gamma_t * ctx.lambda_t;
    for (z, &x) in l.z.iter_mut().zip(ctx.x_t) {
        *z = ctx.rho * (decay * *z + x);
    }
    let scale = ctx.alpha * delta;
    for (w, &z) in l.w.iter_mut().zip(&l.z) {
        *w += scale * z;
    }
    l.check_weights()?;
    Ok(delta)
}

/// True online TD(λ̄) with dutch traces; off-policy through per-decision ρ.
pub fn true_online_td_step(l: &mut LinearLearner, ctx: &StepContext) -> Result<f64> {
    let v = l.value(ctx.x_t);
    let v_next = l.value(ctx.x_next);
    let delta = l.check(ctx, ctx.r + ctx.gamma_next * v_next - v)?;
    let decay = ctx.gamma_t * ctx.lambda_t;
    let zx = dot(&l.z, ctx.x_t);
    let a = ctx.alpha * (1.0 - ctx.rho * decay * zx);
    for (z, &x) in l.z.iter_mut().zip(ctx.x_t) {
        *z = ctx.rho * (decay * *z + a * x);
    }
    let corr = v - l.v_old;
    let ax = ctx.alpha * ctx.rho;
    for ((w, &z), &x) in l.w.iter_mut().zip(&l.z).zip(ctx.x_t) {
        *w += delta * z + (z - ax * x) * corr;
    }
    l.v_old = v_next;
    l.check_weights()?;
    Ok(delta)
}

/// True online GTD(λ̄) (van Hasselt, Mahmood and Sutton, 2014) with secondary weights h = `w_secondary`.
pub fn true_online_gtd_step(l: &mut LinearLearner, ctx: &StepContext) -> Result<f64> {
    let dim = l.w.len();
    if l.w_secondary.len() != dim {
        l.w_secondary = vec![0.0; dim];
        l.z_grad = vec![0.0; dim];
        l.z_secondary = vec![0.0; dim];
    }
    let v = l.value(ctx.x_t);
    let v_next = l.value(ctx.x_next);
    let delta = l.check(ctx, ctx.r + ctx.gamma_next * v_next - v)?;
    let decay = ctx.gamma_t * ctx.lambda_t;
    let rho = ctx.rho;

    let zx = dot(&l.z, ctx.x_t);
    let a = ctx.alpha * (1.0 - rho * decay * zx);
    for (z, &x) in l.z.iter_mut().zip(ctx.x_t) {
        *z = rho * (decay * *z + a * x);
    }
    for (g, &x) in l.z_grad.iter_mut().zip(ctx.x_t) {
        *g = rho * (decay * *g + x);
    }
    let hx_trace = dot(&l.z_secondary, ctx.x_t);
    let b = ctx.beta * (1.0 - l.rho_prev * decay * hx_trace);
    for (e, &x) in l.z_secondary.iter_mut().zip(ctx.x_t) {
        *e = l.rho_prev * decay * *e + b * x;
    }

    let h_dot_grad = dot(&l.w_secondary, &l.z_grad);
    let h_dot_x = dot(&l.w_secondary, ctx.x_t);
    let corr = v - l.v_old;
    let ax = ctx.alpha * rho;
    let gtd = ctx.alpha * ctx.gamma_next * (1.0 - ctx.lambda_next) * h_dot_grad;
    for i in 0..dim {
        l.w[i] += delta * l.z[i] + (l.z[i] - ax * ctx.x_t[i]) * corr - gtd * ctx.x_next[i];
    }
    for i in 0..dim {
        l.w_secondary[i] += rho * delta * l.z_secondary[i] - ctx.beta * h_dot_x * ctx.x_t[i];
    }
    l.v_old = v_next;
    l.rho_prev = rho;
    l.check_weights()?;
    Ok(delta)
}

/// First-visit Monte-Carlo estimate plus which states were visited at all.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub values: ValueVector,
    pub visited: Vec<bool>,
}

pub fn mc_first_visit(episodes: &[Vec<Transition>], n_states: usize) -> McEstimate {
    let mut sums = vec![0.0; n_states];
    let mut counts = vec![0usize; n_states];
    for ep in episodes {
        let mut returns = vec![0.0; ep.len()];
        let mut g = 0.0;
        for (t, tr) in ep.iter().enumerate().rev() {
            g = tr.gamma_next * g + tr.r;
            returns[t] = g;
        }
        let mut seen = vec![false; n_states];
        for (t, tr) in ep.iter().enumerate() {
            if !seen[tr.s] {
                seen[tr.s] = true;
                sums[tr.s] += returns[t];
                counts[tr.s] += 1;
            }
        }
    }
    let v = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    McEstimate { values: ValueVector { v }, visited: counts.iter().map(|&c| c > 0).collect() }
}

/// G_{t:t+n}: discounted rewards plus the discounted bootstrap V(S_{t+n}); the full return when t+n ≥ T.
pub fn n_step_return(traj: &[Transition], t: usize, n: usize, v: impl Fn(usize) -> f64) -> f64 {
    let end = (t + n).min(traj.len());
    let mut g = 0.0;
    let mut disc = 1.0;
    for tr in &traj[t..end] {
        g += disc * tr.r;
        disc *= tr.gamma_next;
    }
    if t + n < traj.len() {
        g += disc * v(traj[t + n - 1].s_next);
    }
    g
}

/// All λ̄-returns of a complete episode, back to front:
/// G_t = R_{t+1} + γ_{t+1}[(1 − λ_{t+1}) V(S_{t+1}) + λ_{t+1} G_{t+1}].
pub fn lambda_returns_offline(
    traj: &[Transition],
    v: impl Fn(usize) -> f64,
    lambda: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    let mut g = 0.0;
    for (t, tr) in traj.iter().enumerate().rev() {
        let l = lambda(tr.s_next);
        g = tr.r + tr.gamma_next * ((1.0 - l) * v(tr.s_next) + l * g);
        out[t] = g;
    }
    out
}

pub fn lambda_return_offline(
    traj: &[Transition],
    t: usize,
    v: impl Fn(usize) -> f64,
    lambda: impl Fn(usize) -> f64,
) -> f64 {
    lambda_returns_offline(&traj[t..], v, lambda)[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(s: usize, r: f64, s_next: usize, g: f64) -> Transition {
        Transition { s, a: 0, r, s_next, gamma_next: g, rho: 1.0 }
    }

    fn ctx<'a>(x: &'a [f64], xn: &'a [f64], r: f64, lambda: f64) -> StepContext<'a> {
        StepContext {
            x_t: x,
            x_next: xn,
            r,
            gamma_t: 0.9,
            gamma_next: 0.9,
            lambda_t: lambda,
            lambda_next: lambda,
            rho: 1.0,
            alpha: 0.1,
            beta: 0.1,
        }
    }

    #[test]
    fn mc_examples() {
        let ep = vec![tr(0, 0.0, 1, 1.0), tr(1, 0.0, 2, 1.0), tr(2, 1.0, 3, 0.0)];
        let est = mc_first_visit(&[ep.clone()], 4);
        assert_eq!(est.values.v[..3], [1.0, 1.0, 1.0]);
        assert_eq!(est.visited, vec![true, true, true, false]);
        let ep0 = vec![tr(0, 0.5, 1, 0.0), tr(1, 2.0, 0, 0.0), tr(0, 9.0, 2, 0.0)];
        let est = mc_first_visit(&[ep0], 3);
        assert_eq!(est.values.v, vec![0.5, 2.0, 0.0]);
    }

    #[test]
    fn n_step_examples() {
        let ep = vec![tr(0, 0.0, 1, 0.5), tr(1, 0.0, 2, 0.5), tr(2, 1.0, 3, 0.0)];
        let v = |s: usize| if s == 2 { 2.0 } else { 0.0 };
        assert_eq!(n_step_return(&ep, 0, 2, v), 0.5);
        assert_eq!(n_step_return(&ep, 0, 3, |_| 100.0), 0.25);
        assert_eq!(n_step_return(&ep, 0, 10, |_| 100.0), 0.25);
        let ep0 = vec![tr(0, 0.7, 1, 0.0), tr(1, 5.0, 2, 0.0)];
        assert_eq!(n_step_return(&ep0, 0, 2, |_| 3.0), 0.7);
    }

    #[test]
    fn lambda_return_endpoints() {
        let ep = vec![tr(0, 0.3, 1, 0.9), tr(1, -1.0, 2, 0.8), tr(2, 2.0, 3, 0.0)];
        let v = |s: usize| [0.1, 0.2, 0.3, 0.0][s];
        for t in 0..3 {
            let one = lambda_return_offline(&ep, t, v, |_| 0.0);
            assert!((one - n_step_return(&ep, t, 1, v)).abs() < 1e-15);
            let mc = lambda_return_offline(&ep, t, v, |_| 1.0);
            assert!((mc - n_step_return(&ep, t, 10, v)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_is_td0() {
        let x = [1.0, 0.0, 0.5];
        let xn = [0.0, 1.0, 0.0];
        for kind in [LearnerKind::TdLambda, LearnerKind::TrueOnlineTd, LearnerKind::TrueOnlineGtd] {
            let mut l = LinearLearner::for_kind(kind, 3);
            l.w = vec![0.2, -0.4, 1.0];
            let w0 = l.w.clone();
            let d = l.step(kind, &ctx(&x, &xn, 1.0, 0.7)).unwrap();
            let expect = 1.0 + 0.9 * -0.4 - (0.2 + 0.5);
            assert!((d - expect).abs() < 1e-15);
            for i in 0..3 {
                assert!((l.w[i] - (w0[i] + 0.1 * expect * x[i])).abs() < 1e-15, "{kind:?}");
            }
        }
    }

    #[test]
    fn zero_rho_leaves_weights() {
        let x = [1.0, 0.0];
        let xn = [0.0, 1.0];
        for kind in [LearnerKind::TdLambda, LearnerKind::TrueOnlineTd, LearnerKind::TrueOnlineGtd] {
            let mut l = LinearLearner::for_kind(kind, 2);
            l.w = vec![0.3, 0.1];
            l.step(kind, &ctx(&x, &xn, 1.0, 0.5)).unwrap();
            let before = l.w.clone();
            let mut c = ctx(&xn, &x, 2.0, 0.5);
            c.rho = 0.0;
            l.step(kind, &c).unwrap();
            assert_eq!(l.w, before, "{kind:?}");
        }
    }

    #[test]
    fn nonfinite_delta_is_divergence() {
        let x = [1.0];
        let mut l = LinearLearner::new(1);
        let err = l.step(LearnerKind::TrueOnlineTd, &ctx(&x, &x, f64::NAN, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, .. }));
        let mut big = LinearLearner::new(1);
        let mut c = ctx(&x, &x, 1e12, 0.0);
        c.alpha = 1.0;
        assert!(matches!(big.step(LearnerKind::TdLambda, &c), Err(Error::Divergence { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut l = LinearLearner::with_secondary(2);
        l.step(LearnerKind::TrueOnlineGtd, &ctx(&[1.0, 0.0], &[0.0, 1.0], 1.0, 0.5)).unwrap();
        let back = LinearLearner::from_snapshot_json(&l.snapshot_json()).unwrap();
        assert_eq!(back, l);
    }
}
