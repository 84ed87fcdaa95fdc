//! Auxiliary learners for E[G], E[G^λ̄] and Var[G^λ̄] (VTD and direct VTD).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::learners::{LearnerKind, LinearLearner, StepContext, DIVERGENCE_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    #[default]
    Dvtd,
    Vtd,
}

/// Pseudo-reward and pseudo-discount for the second moment of the λ̄-return.
/// Ḡ = R + γ'(1 − λ')V(x'); R̄ = ρ²Ḡ² + 2ρ²γ'λ'Ḡ·Ê[G^λ̄](x'); γ̄ = ρ²γ'²λ'².
pub fn vtd_pseudo_transition(ctx: &StepContext, value_next: f64, lambda_return_next: f64) -> (f64, f64) {
    let (g, l, rho2) = (ctx.gamma_next, ctx.lambda_next, ctx.rho * ctx.rho);
    let g_bar = ctx.r + g * (1.0 - l) * value_next;
    let r_bar = rho2 * g_bar * g_bar + 2.0 * rho2 * g * l * g_bar * lambda_return_next;
    (r_bar, rho2 * g * g * l * l)
}

/// Pseudo-reward δ² and pseudo-discount (γ'λ')² for the variance of the λ̄-return.
pub fn dvtd_pseudo_transition(delta: f64, gamma_next: f64, lambda_next: f64, _rho: f64) -> (f64, f64) {
    let gl = gamma_next * lambda_next;
    (delta * delta, gl * gl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryBundle {
    pub kind: LearnerKind,
    pub mode: VarianceMode,
    pub rate_multiplier: f64,
    pub learner_e_g: LinearLearner,
    pub learner_e_glambda: LinearLearner,
    /// Variance under DVTD, second moment under VTD.
    pub learner_var: LinearLearner,
    pub clamp_count: u64,
    /// Pseudo-discount of the current state, carried between steps for the variance trace.
    gamma_bar_t: f64,
}

impl AuxiliaryBundle {
    pub fn new(kind: LearnerKind, dim: usize, mode: VarianceMode) -> Self {
        Self {
            kind,
            mode,
            rate_multiplier: 2.0,
            learner_e_g: LinearLearner::for_kind(kind, dim),
            learner_e_glambda: LinearLearner::for_kind(kind, dim),
            learner_var: LinearLearner { divergence_bound: DIVERGENCE_BOUND * DIVERGENCE_BOUND, ..LinearLearner::for_kind(kind, dim) },
            clamp_count: 0,
            gamma_bar_t: 0.0,
        }
    }

    pub fn reset_episode(&mut self) {
        self.learner_e_g.reset_episode();
        self.learner_e_glambda.reset_episode();
        self.learner_var.reset_episode();
        self.gamma_bar_t = 0.0;
    }

    pub fn expected_return(&self, x: &[f64]) -> f64 {
        self.learner_e_g.value(x)
    }

    pub fn expected_lambda_return(&self, x: &[f64]) -> f64 {
        self.learner_e_glambda.value(x)
    }

    /// Var[G^λ̄](x) clamped at zero.
    pub fn variance(&self, x: &[f64]) -> f64 {
        self.variance_raw(x).max(0.0)
    }

    /// Like `variance`, counting how often the clamp was needed.
    pub fn variance_counted(&mut self, x: &[f64]) -> f64 {
        let raw = self.variance_raw(x);
        if raw < 0.0 {
            self.clamp_count += 1;
        }
        raw.max(0.0)
    }

    fn variance_raw(&self, x: &[f64]) -> f64 {
        match self.mode {
            VarianceMode::Dvtd => self.learner_var.value(x),
            VarianceMode::Vtd => {
                let m = self.expected_lambda_return(x);
                self.learner_var.value(x) - m * m
            }
        }
    }
}

/// Advances all three auxiliary learners on one transition. `ctx` carries the value learner's
/// rates, which are scaled by `rate_multiplier`; `value_delta` and `value_next` come from the
/// value learner before its own update.
pub fn bundle_step(b: &mut AuxiliaryBundle, ctx: &StepContext, value_delta: f64, value_next: f64) -> Result<()> {
    let alpha = ctx.alpha * b.rate_multiplier;
    let beta = ctx.beta * b.rate_multiplier;
    let kind = b.kind;

    let (r_bar, gamma_bar, rho_var) = match b.mode {
        VarianceMode::Dvtd => {
            let (r, g) = dvtd_pseudo_transition(value_delta, ctx.gamma_next, ctx.lambda_next, ctx.rho);
            (r, g, ctx.rho)
        }
        VarianceMode::Vtd => {
            let m_next = b.expected_lambda_return(ctx.x_next);
            let (r, g) = vtd_pseudo_transition(ctx, value_next, m_next);
            (r, g, 1.0)
        }
    };
    let var_ctx = StepContext {
        r: r_bar,
        gamma_t: b.gamma_bar_t,
        gamma_next: gamma_bar,
        lambda_t: 1.0,
        lambda_next: 1.0,
        rho: rho_var,
        alpha,
        beta,
        ..*ctx
    };
    let mc_ctx = StepContext { lambda_t: 1.0, lambda_next: 1.0, alpha, beta, ..*ctx };
    let lam_ctx = StepContext { alpha, beta, ..*ctx };

    b.learner_e_g.step(kind, &mc_ctx).map_err(|e| e.tag_learner("E[G]"))?;
    b.learner_e_glambda.step(kind, &lam_ctx).map_err(|e| e.tag_learner("E[G^lambda]"))?;
    b.learner_var.step(kind, &var_ctx).map_err(|e| e.tag_learner("Var[G^lambda]"))?;
    b.gamma_bar_t = gamma_bar;
    Ok(())
}
