//! State-based λ: the parametric λ function, META's semi-partial derivative and minimizer,
//! λ-greedy, and the adapters that drive them.

mod evaluation;

pub use evaluation::{meta_policy_evaluation, PredictionProblem, PredictionSettings};

use serde::{Deserialize, Serialize};

pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// λ(x) = clip(1 − w_λᵀx, 0, 1); zero weights give λ ≡ 1.
///
/// With `blocks` set, the weights are split into consecutive blocks and every feature vector is
/// assumed to hold exactly one unit entry per block (one-hot is a single block, tile coding one
/// block per tiling). Every attainable readout then lies in
/// [1 − Σ_b max_b w, 1 − Σ_b min_b w], and an update is kept only if that whole interval stays
/// inside [0, 1]. Without blocks only the readout at the updated x is checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFunction {
    pub w: Vec<f64>,
    #[serde(default)]
    pub blocks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// The step would have left [0, 1] at x and was dropped.
    Cancelled,
    Unchanged,
}

/// Statistics at the successor state that META and λ-greedy consume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaStepInputs {
    pub gamma_next: f64,
    pub rho_acc: f64,
    pub v_next: f64,
    pub e_g: f64,
    pub e_glambda: f64,
    pub var_glambda: f64,
    pub kappa: f64,
}

impl LambdaFunction {
    pub fn new(dim: usize) -> Self {
        Self { w: vec![0.0; dim], blocks: None }
    }

    /// Panics if the block sizes do not add up to `dim`.
    pub fn with_blocks(dim: usize, blocks: Vec<usize>) -> Self {
        assert_eq!(blocks.iter().sum::<usize>(), dim, "blocks must cover the weights");
        Self { w: vec![0.0; dim], blocks: Some(blocks) }
    }

    /// Smallest and largest readout over all block-structured feature vectors.
    pub fn readout_bounds(&self) -> Option<(f64, f64)> {
        let blocks = self.blocks.as_ref()?;
        let (mut lo, mut hi) = (1.0, 1.0);
        let mut start = 0;
        for &len in blocks {
            let part = &self.w[start..start + len];
            lo -= part.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi -= part.iter().cloned().fold(f64::INFINITY, f64::min);
            start += len;
        }
        Some((lo, hi))
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        1.0 - self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(0.0, 1.0)
    }

    /// Moves the raw readout at x by `change` along x, unless that leaves [0, 1].
    fn shift(&mut self, x: &[f64], change: f64) -> UpdateOutcome {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        if change == 0.0 || sq == 0.0 {
            return UpdateOutcome::Unchanged;
        }
        let after = self.raw(x) + change;
        if !(0.0..=1.0).contains(&after) {
            return UpdateOutcome::Cancelled;
        }
        let step = change / sq;
        let before = self.blocks.is_some().then(|| self.w.clone());
        for (w, &xi) in self.w.iter_mut().zip(x) {
            *w -= step * xi;
        }
        if let (Some(old), Some((lo, hi))) = (before, self.readout_bounds()) {
            if lo < 0.0 || hi > 1.0 {
                self.w = old;
                return UpdateOutcome::Cancelled;
            }
        }
        UpdateOutcome::Applied
    }

    /// Sets λ(x) to `target` exactly, the λ-greedy assignment.
    pub fn assign(&mut self, x: &[f64], target: f64) -> UpdateOutcome {
        let change = target - self.raw(x);
        self.shift(x, change)
    }
}

/// ∂J/∂λ' with the expectation and variance terms held fixed:
/// γ'²[λ'((V − E[G^λ̄])² + Var[G^λ̄]) − (E[G^λ̄] − V)(E[G] − V)].
pub fn meta_partial(lambda_next: f64, m: &MetaStepInputs) -> f64 {
    let bias = m.v_next - m.e_glambda;
    m.gamma_next
        * m.gamma_next
        * (lambda_next * (bias * bias + m.var_glambda) - (m.e_glambda - m.v_next) * (m.e_g - m.v_next))
}

/// Closed-form Ĵ(λ') whose derivative `meta_partial` is, up to a λ'-independent constant.
pub fn meta_objective(lambda_next: f64, m: &MetaStepInputs) -> f64 {
    let g2 = m.gamma_next * m.gamma_next;
    let mean = (m.v_next - m.e_g) - lambda_next * (m.v_next - m.e_glambda);
    0.5 * g2 * (mean * mean + lambda_next * lambda_next * m.var_glambda)
}

/// argmin of Ĵ over [0, 1] plus whether the denominator was degenerate.
pub fn meta_minimizer_flagged(m: &MetaStepInputs) -> (f64, bool) {
    let bias = m.v_next - m.e_glambda;
    let den = bias * bias + m.var_glambda;
    if !(den >= DENOMINATOR_FLOOR) {
        return (0.0, true);
    }
    ((bias * (m.v_next - m.e_g) / den).clamp(0.0, 1.0), false)
}

pub fn meta_minimizer(m: &MetaStepInputs) -> f64 {
    meta_minimizer_flagged(m).0
}

pub fn lambda_greedy_target_flagged(v_next: f64, e_g: f64, var_g: f64) -> (f64, bool) {
    let err2 = (v_next - e_g) * (v_next - e_g);
    let den = err2 + var_g.max(0.0);
    if !(den >= DENOMINATOR_FLOOR) {
        return (0.0, true);
    }
    ((err2 / den).clamp(0.0, 1.0), false)
}

/// (V − E[G])² / ((V − E[G])² + Var[G]).
pub fn lambda_greedy_target(v_next: f64, e_g: f64, var_g: f64) -> f64 {
    lambda_greedy_target_flagged(v_next, e_g, var_g).0
}

/// One META step at x': descends Ĵ by κ·ρ_acc·∂J/∂λ' through the linear parametrization, so the
/// readout at x' changes by −κ ρ_acc ∂J/∂λ' ‖x'‖².
pub fn meta_update(lf: &mut LambdaFunction, x_next: &[f64], m: &MetaStepInputs) -> UpdateOutcome {
    if m.kappa == 0.0 {
        return UpdateOutcome::Unchanged;
    }
    let partial = meta_partial(lf.value(x_next), m);
    let sq: f64 = x_next.iter().map(|v| v * v).sum();
    let change = -m.kappa * m.rho_acc * partial * sq;
    if !change.is_finite() {
        return UpdateOutcome::Cancelled;
    }
    lf.shift(x_next, change)
}

/// How λ is chosen during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Adapter {
    Fixed { lambda: f64 },
    Greedy,
    /// Parametric META over the value features.
    Meta { kappa: f64 },
    /// META over one-hot state features.
    MetaNp { kappa: f64 },
}

impl Adapter {
    pub fn label(&self) -> String {
        match self {
            Adapter::Fixed { lambda } => format!("lambda={lambda}"),
            Adapter::Greedy => "greedy".into(),
            Adapter::Meta { kappa } => format!("meta(kappa={kappa:e})"),
            Adapter::MetaNp { kappa } => format!("meta_np(kappa={kappa:e})"),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        !matches!(self, Adapter::Fixed { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(v: f64, eg: f64, egl: f64, var: f64) -> MetaStepInputs {
        MetaStepInputs { gamma_next: 1.0, rho_acc: 1.0, v_next: v, e_g: eg, e_glambda: egl, var_glambda: var, kappa: 1e-3 }
    }

    #[test]
    fn partial_substitution() {
        // bias term 1 + variance 1, weighted by 0.5, minus the cross term (1)(2)
        assert!((meta_partial(0.5, &inputs(0.0, 2.0, 1.0, 1.0)) - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn minimizer_examples() {
        assert_eq!(meta_minimizer(&inputs(0.3, 0.3, 0.3, 0.5)), 0.0);
        assert_eq!(meta_minimizer(&inputs(0.0, 2.0, 2.0, 0.0)), 1.0);
        let (l, degenerate) = meta_minimizer_flagged(&inputs(1.0, 1.0, 1.0, 0.0));
        assert_eq!((l, degenerate), (0.0, true));
        let m = inputs(0.4, -0.3, 0.1, 0.7);
        let l = meta_minimizer(&m);
        assert!(l > 0.0 && l < 1.0);
        assert!(meta_partial(l, &m).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(lambda_greedy_target(0.0, 1.0, 0.0), 1.0);
        assert_eq!(lambda_greedy_target(1.0, 1.0, 2.0), 0.0);
        assert_eq!(lambda_greedy_target(2.0, 1.0, 1.0), 0.5);
        assert_eq!(lambda_greedy_target_flagged(1.0, 1.0, 0.0), (0.0, true));
    }

    #[test]
    fn zero_kappa_is_noop() {
        let mut lf = LambdaFunction::new(3);
        let mut m = inputs(0.0, 1.0, 0.5, 0.2);
        m.kappa = 0.0;
        assert_eq!(meta_update(&mut lf, &[0.0, 1.0, 0.0], &m), UpdateOutcome::Unchanged);
        assert_eq!(lf.w, vec![0.0; 3]);
    }

    #[test]
    fn positive_partial_lowers_lambda() {
        let mut lf = LambdaFunction::new(3);
        let x = [0.0, 1.0, 0.0];
        let m = inputs(0.0, 0.0, 0.0, 1.0);
        assert!(meta_partial(1.0, &m) > 0.0);
        assert_eq!(meta_update(&mut lf, &x, &m), UpdateOutcome::Applied);
        assert!(lf.value(&x) < 1.0);
        assert_eq!(lf.value(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn out_of_range_update_is_cancelled() {
        let mut lf = LambdaFunction::new(1);
        let x = [1.0];
        let mut m = inputs(0.0, 0.0, 0.0, 1.0);
        m.kappa = 10.0;
        assert_eq!(meta_update(&mut lf, &x, &m), UpdateOutcome::Cancelled);
        assert_eq!(lf.w, vec![0.0]);
        let mut up = inputs(0.0, 5.0, 1.0, 0.0);
        up.kappa = 1e-3;
        assert_eq!(meta_update(&mut lf, &x, &up), UpdateOutcome::Cancelled);
    }

    #[test]
    fn assign_hits_target() {
        let mut lf = LambdaFunction::new(4);
        let x = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(lf.assign(&x, 0.25), UpdateOutcome::Applied);
        assert!((lf.value(&x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn converges_to_minimizer_tabular() {
        let m = MetaStepInputs { kappa: 1e-3, ..inputs(0.5, -0.2, 0.1, 0.4) };
        let target = meta_minimizer(&m);
        let mut lf = LambdaFunction::new(2);
        let x = [1.0, 0.0];
        for _ in 0..100_000 {
            meta_update(&mut lf, &x, &m);
        }
        assert!((lf.value(&x) - target).abs() < 1e-4, "{} vs {target}", lf.value(&x));
    }

    #[test]
    fn block_bound_guards_unvisited_combinations() {
        // Two tilings of two tiles: x = [1,0,1,0] shares a tile with [1,0,0,1].
        let mut lf = LambdaFunction::with_blocks(4, vec![2, 2]);
        assert_eq!(lf.assign(&[1.0, 0.0, 1.0, 0.0], 0.2), UpdateOutcome::Applied);
        let (lo, hi) = lf.readout_bounds().unwrap();
        assert!((lo - 0.2).abs() < 1e-12 && hi == 1.0);
        // Raising [0,1,1,0] to 1 makes w[1] negative, which lifts [0,1,0,1] above 1.
        assert_eq!(lf.assign(&[0.0, 1.0, 1.0, 0.0], 1.0), UpdateOutcome::Cancelled);
        let mut plain = lf.clone();
        plain.blocks = None;
        assert_eq!(plain.assign(&[0.0, 1.0, 1.0, 0.0], 1.0), UpdateOutcome::Applied);
        assert!(plain.raw(&[0.0, 1.0, 0.0, 1.0]) > 1.0);
    }
}
