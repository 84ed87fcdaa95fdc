use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lambda_greedy_target, meta_update, Adapter, LambdaFunction, MetaStepInputs, UpdateOutcome};
use crate::aux::{bundle_step, AuxiliaryBundle, VarianceMode};
use crate::dp::{self, StateFrequency, ValueVector};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Observation};
use crate::learners::{LearnerKind, LinearLearner, StepContext};
use crate::mdp::{check_coverage, DiscountFunction, FiniteMdp, TabularPolicy};
use crate::record::{divergence_info, RangeTracker, RunRecord};

/// A tabular prediction task with its exact ground truth, computed once.
#[derive(Debug, Clone)]
pub struct PredictionProblem {
    pub mdp: FiniteMdp,
    pub behavior: TabularPolicy,
    pub target: TabularPolicy,
    pub gamma: DiscountFunction,
    pub features: Vec<Vec<f64>>,
    pub onehot: Vec<Vec<f64>>,
    /// Block layout of `features`, see `LambdaFunction::with_blocks`.
    pub blocks: Vec<usize>,
    pub v_true: ValueVector,
    pub d: StateFrequency,
    ratios: Vec<Vec<f64>>,
}

impl PredictionProblem {
    pub fn new(
        mdp: FiniteMdp,
        behavior: TabularPolicy,
        target: TabularPolicy,
        gamma: DiscountFunction,
        feature_map: &FeatureMap,
        observe: impl Fn(usize) -> Observation,
    ) -> Result<Self> {
        check_coverage(&mdp, &behavior, &target)?;
        let n = mdp.n_states();
        let features = (0..n).map(|s| feature_map.encode(&observe(s))).collect::<Result<Vec<_>>>()?;
        let onehot_map = FeatureMap::onehot(n)?;
        let onehot = (0..n).map(|s| onehot_map.encode_state(s)).collect::<Result<Vec<_>>>()?;
        let v_true = dp::solve_values_direct(&mdp, &target, &gamma)?;
        let d = dp::solve_state_frequencies(&mdp, &target, dp::DEFAULT_THETA, dp::DEFAULT_MAX_SWEEPS)?;
        let ratios = (0..n)
            .map(|s| {
                (0..mdp.n_actions())
                    .map(|a| {
                        let b = behavior.prob(s, a);
                        if b > 0.0 { target.prob(s, a) / b } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let blocks = feature_map.blocks();
        Ok(Self { mdp, behavior, target, gamma, features, onehot, blocks, v_true, d, ratios })
    }

    pub fn dimension(&self) -> usize {
        self.features[0].len()
    }

    /// V(s) = wᵀφ(s) on non-terminal states, 0 on terminals.
    pub fn estimate(&self, learner: &LinearLearner) -> Vec<f64> {
        (0..self.mdp.n_states())
            .map(|s| if self.mdp.is_terminal(s) { 0.0 } else { learner.value(&self.features[s]) })
            .collect()
    }

    pub fn value_error(&self, learner: &LinearLearner) -> f64 {
        dp::overall_value_error(&self.estimate(learner), &self.v_true, &self.d)
            .expect("estimate has one entry per state")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSettings {
    pub learner: LearnerKind,
    pub adapter: Adapter,
    pub alpha: f64,
    /// Secondary rate; `None` means equal to alpha.
    pub beta: Option<f64>,
    pub aux_mode: VarianceMode,
    pub aux_rate_multiplier: f64,
    pub buffer_fraction: f64,
    pub steps: u64,
    pub log_interval: u64,
}

impl PredictionSettings {
    pub fn new(learner: LearnerKind, adapter: Adapter, alpha: f64, steps: u64) -> Self {
        Self {
            learner,
            adapter,
            alpha,
            beta: None,
            aux_mode: VarianceMode::Dvtd,
            aux_rate_multiplier: 2.0,
            buffer_fraction: 0.1,
            steps,
            log_interval: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || self.beta.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.buffer_fraction) {
            return Err(Error::Config(format!("buffer fraction {} outside [0, 1)", self.buffer_fraction)));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log interval must be positive".into()));
        }
        if let Adapter::Fixed { lambda } = self.adapter {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Online policy evaluation with auxiliary learners and META/λ-greedy adaptation of λ.
/// Each step: act under the behavior policy, advance the auxiliary learners, adapt λ at the
/// successor (after the buffer period), then advance the value learner.
pub fn meta_policy_evaluation(
    p: &PredictionProblem,
    cfg: &PredictionSettings,
    cell: &str,
    replica: u32,
    seed: u64,
) -> RunRecord {
    let mut rec = RunRecord::empty(cell, replica, seed, cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = &p.mdp;
    let dim = p.dimension();
    let kind = cfg.learner;
    let alpha = cfg.alpha;
    let beta = cfg.beta.unwrap_or(alpha);
    let lam_feats = match cfg.adapter {
        Adapter::MetaNp { .. } => &p.onehot,
        _ => &p.features,
    };
    let mut lf = match cfg.adapter {
        Adapter::MetaNp { .. } => LambdaFunction::with_blocks(p.onehot.len(), vec![p.onehot.len()]),
        _ => LambdaFunction::with_blocks(dim, p.blocks.clone()),
    };
    let lambda_of = |lf: &LambdaFunction, s: usize| match cfg.adapter {
        Adapter::Fixed { lambda } => lambda,
        _ => lf.value(&lam_feats[s]),
    };
    let raw_of = |lf: &LambdaFunction, s: usize| match cfg.adapter {
        Adapter::Fixed { lambda } => lambda,
        _ => lf.raw(&lam_feats[s]),
    };
    let mut value = LinearLearner::for_kind(kind, dim);
    let mut bundle = cfg.adapter.is_adaptive().then(|| {
        let mut b = AuxiliaryBundle::new(kind, dim, cfg.aux_mode);
        b.rate_multiplier = cfg.aux_rate_multiplier;
        b
    });
    let greedy = matches!(cfg.adapter, Adapter::Greedy);
    let buffer = (cfg.buffer_fraction * cfg.steps as f64).floor() as u64;
    let mut tracker = RangeTracker::new();

    let mut t: u64 = 0;
    'episodes: while t < cfg.steps {
        value.reset_episode();
        if let Some(b) = bundle.as_mut() {
            b.reset_episode();
        }
        let mut s = mdp.sample_initial(&mut rng);
        let mut rho_acc = 1.0;
        let mut gamma_t = p.gamma.at(s);
        let mut lambda_t = lambda_of(&lf, s);
        while !mdp.is_terminal(s) && t < cfg.steps {
            let a = p.behavior.sample(s, &mut rng);
            let rho = p.ratios[s][a];
            rho_acc *= rho;
            rec.max_rho_acc = rec.max_rho_acc.max(rho_acc);
            let (sn, r) = mdp.sample_outcome(s, a, &mut rng);
            let gamma_next = p.gamma.at(sn);
            let x = &p.features[s];
            let xn = &p.features[sn];
            let mut lambda_next = lambda_of(&lf, sn);
            let v_next = value.value(xn);
            let delta = r + gamma_next * v_next - value.value(x);

            if let Some(b) = bundle.as_mut() {
                let (aux_lt, aux_ln) = if greedy { (1.0, 1.0) } else { (lambda_t, lambda_next) };
                let ctx = StepContext {
                    x_t: x,
                    x_next: xn,
                    r,
                    gamma_t,
                    gamma_next,
                    lambda_t: aux_lt,
                    lambda_next: aux_ln,
                    rho,
                    alpha,
                    beta,
                };
                if let Err(e) = bundle_step(b, &ctx, delta, v_next) {
                    rec.divergence = Some(divergence_info(e, t));
                    break 'episodes;
                }
                if t >= buffer && !mdp.is_terminal(sn) {
                    let xl = &lam_feats[sn];
                    let var = b.variance_counted(xn);
                    let e_g = b.expected_return(xn);
                    let outcome = match cfg.adapter {
                        Adapter::Meta { kappa } | Adapter::MetaNp { kappa } => {
                            let m = MetaStepInputs {
                                gamma_next,
                                rho_acc,
                                v_next,
                                e_g,
                                e_glambda: b.expected_lambda_return(xn),
                                var_glambda: var,
                                kappa,
                            };
                            meta_update(&mut lf, xl, &m)
                        }
                        Adapter::Greedy => lf.assign(xl, lambda_greedy_target(v_next, e_g, var)),
                        Adapter::Fixed { .. } => UpdateOutcome::Unchanged,
                    };
                    if outcome == UpdateOutcome::Cancelled {
                        rec.cancelled_updates += 1;
                    }
                    lambda_next = lambda_of(&lf, sn);
                }
            }
            tracker.observe(raw_of(&lf, sn));

            let ctx = StepContext {
                x_t: x,
                x_next: xn,
                r,
                gamma_t,
                gamma_next,
                lambda_t,
                lambda_next,
                rho,
                alpha,
                beta,
            };
            if let Err(e) = value.step(kind, &ctx) {
                rec.divergence = Some(divergence_info(e, t));
                break 'episodes;
            }
            t += 1;
            if t % cfg.log_interval == 0 {
                rec.series.push((t, p.value_error(&value)));
                rec.lambda_ranges.extend(tracker.flush(t));
            }
            s = sn;
            gamma_t = gamma_next;
            lambda_t = lambda_next;
        }
    }
    rec.lambda_snapshot = (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).map(|s| lambda_of(&lf, s)).collect();
    rec.variance_clamps = bundle.as_ref().map_or(0, |b| b.clamp_count);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RingWorld;

    fn ringworld(b: f64, t: f64) -> PredictionProblem {
        let env = RingWorld::new(11).unwrap();
        let mdp = env.as_finite_mdp();
        let behavior = RingWorld::policy(&mdp, b).unwrap();
        let target = RingWorld::policy(&mdp, t).unwrap();
        let gamma = DiscountFunction::constant(&mdp, 0.95).unwrap();
        let fm = FeatureMap::onehot(mdp.n_states()).unwrap();
        PredictionProblem::new(mdp, behavior, target, gamma, &fm, Observation::tabular).unwrap()
    }

    #[test]
    fn zero_kappa_matches_lambda_one() {
        let p = ringworld(0.4, 0.35);
        let base = PredictionSettings::new(LearnerKind::TrueOnlineTd, Adapter::Fixed { lambda: 1.0 }, 0.01, 20_000);
        let meta = PredictionSettings { adapter: Adapter::Meta { kappa: 0.0 }, ..base.clone() };
        let a = meta_policy_evaluation(&p, &base, "a", 0, 5);
        let b = meta_policy_evaluation(&p, &meta, "b", 0, 5);
        assert_eq!(a.series, b.series);
        assert_eq!(a.series.len(), 20);
    }

    #[test]
    fn errors_fall_and_lambda_stays_in_range() {
        let p = ringworld(0.4, 0.35);
        for adapter in [Adapter::Greedy, Adapter::Meta { kappa: 0.01 }, Adapter::MetaNp { kappa: 0.01 }] {
            let cfg = PredictionSettings::new(LearnerKind::TrueOnlineTd, adapter, 0.01, 30_000);
            let rec = meta_policy_evaluation(&p, &cfg, "x", 0, 1);
            assert!(!rec.diverged());
            assert!(rec.lambda_within_unit_interval());
            assert!(rec.series.last().unwrap().1 < rec.series[0].1, "{adapter:?}");
        }
    }

    #[test]
    fn empty_budget_gives_empty_series() {
        let p = ringworld(0.5, 0.5);
        let cfg = PredictionSettings::new(LearnerKind::TdLambda, Adapter::Fixed { lambda: 0.5 }, 0.1, 0);
        let rec = meta_policy_evaluation(&p, &cfg, "empty", 0, 0);
        assert!(rec.series.is_empty() && !rec.diverged());
    }
}
