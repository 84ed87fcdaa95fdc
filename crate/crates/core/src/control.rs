//! Episodic actor-critic with a linear softmax policy, optionally assisted by META.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aux::{bundle_step, AuxiliaryBundle, VarianceMode};
use crate::env::Environment;
use crate::error::Result;
use crate::features::FeatureMap;
use crate::learners::{LearnerKind, LinearLearner, StepContext};
use crate::meta::{lambda_greedy_target, meta_update, Adapter, LambdaFunction, MetaStepInputs, UpdateOutcome};
use crate::record::{divergence_info, RangeTracker, RunRecord};

/// π(a|x) ∝ exp(θ_a·x), θ stored row-major as [n_actions × dim].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_actions: usize,
    pub dim: usize,
    pub theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_actions: usize, dim: usize) -> Self {
        Self { n_actions, dim, theta: vec![0.0; n_actions * dim] }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.theta
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> usize {
        crate::mdp::sample_index(&policy_probs(self, x), rng)
    }

    /// ∇_θ ln π(a|x) = x ⊗ (onehot(a) − π(·|x)), in θ's layout.
    pub fn grad_log(&self, x: &[f64], a: usize, probs: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.theta.len()];
        for (b, row) in g.chunks_exact_mut(self.dim).enumerate() {
            let coef = if a == b { 1.0 } else { 0.0 } - probs[b];
            for (gi, &xi) in row.iter_mut().zip(x) {
                *gi = coef * xi;
            }
        }
        g
    }
}

/// Numerically stable softmax over the policy's logits.
pub fn policy_probs(policy: &SoftmaxPolicy, x: &[f64]) -> Vec<f64> {
    softmax(&policy.logits(x))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub z_theta: Vec<f64>,
    /// Product of discounts seen so far in the episode.
    pub i: f64,
}

impl ActorState {
    pub fn new(policy: &SoftmaxPolicy) -> Self {
        Self { z_theta: vec![0.0; policy.theta.len()], i: 1.0 }
    }

    pub fn reset_episode(&mut self) {
        self.z_theta.iter_mut().for_each(|z| *z = 0.0);
        self.i = 1.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcTransition<'a> {
    pub x: &'a [f64],
    pub a: usize,
    pub r: f64,
    pub x_next: &'a [f64],
    pub gamma_t: f64,
    pub gamma_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcRates {
    pub alpha_w: f64,
    pub alpha_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcTraceDecay {
    pub lambda_w: f64,
    pub lambda_theta: f64,
}

/// One actor-critic update with accumulating traces on both critic and actor.
/// λ_w = λ_θ = 0 gives the one-step method.
pub fn actor_critic_step(
    actor: &mut ActorState,
    critic: &mut LinearLearner,
    policy: &mut SoftmaxPolicy,
    tr: &AcTransition,
    rates: AcRates,
    lambdas: AcTraceDecay,
) -> Result<f64> {
    let probs = policy_probs(policy, tr.x);
    let grad = policy.grad_log(tr.x, tr.a, &probs);
    let ctx = StepContext {
        x_t: tr.x,
        x_next: tr.x_next,
        r: tr.r,
        gamma_t: tr.gamma_t,
        gamma_next: tr.gamma_next,
        lambda_t: lambdas.lambda_w,
        lambda_next: lambdas.lambda_w,
        rho: 1.0,
        alpha: rates.alpha_w,
        beta: 0.0,
    };
    let delta = critic.step(LearnerKind::TdLambda, &ctx).map_err(|e| e.tag_learner("critic"))?;
    let decay = tr.gamma_t * lambdas.lambda_theta;
    for (z, g) in actor.z_theta.iter_mut().zip(&grad) {
        *z = decay * *z + actor.i * g;
    }
    for (th, z) in policy.theta.iter_mut().zip(&actor.z_theta) {
        *th += rates.alpha_theta * delta * z;
    }
    actor.i *= tr.gamma_next;
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub adapter: Adapter,
    pub alpha: f64,
    pub beta: Option<f64>,
    /// Actor step size.
    pub eta: f64,
    pub actor_lambda: f64,
    pub aux_mode: VarianceMode,
    pub aux_rate_multiplier: f64,
    pub buffer_fraction: f64,
    pub steps: u64,
}

impl ControlSettings {
    pub fn new(adapter: Adapter, alpha: f64, eta: f64, steps: u64) -> Self {
        Self {
            adapter,
            alpha,
            beta: None,
            eta,
            actor_lambda: 0.0,
            aux_mode: VarianceMode::Dvtd,
            aux_rate_multiplier: 2.0,
            buffer_fraction: 0.5,
            steps,
        }
    }
}

/// On-policy actor-critic with a true online GTD(λ̄) critic whose λ is adapted by `cfg.adapter`.
/// Both λ adaptation and the actor are frozen during the buffer period. The series holds
/// (step at episode end, discounted episode return); an episode cut off by the budget only
/// leaves its partial return in `truncated_return`.
pub fn meta_actor_critic<E: Environment>(
    env: &mut E,
    features: &FeatureMap,
    cfg: &ControlSettings,
    cell: &str,
    replica: u32,
    seed: u64,
) -> Result<RunRecord> {
    let mut rec = RunRecord::empty(cell, replica, seed, cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = features.dimension();
    let kind = LearnerKind::TrueOnlineGtd;
    let alpha = cfg.alpha;
    let beta = cfg.beta.unwrap_or(alpha);
    let mut policy = SoftmaxPolicy::new(env.n_actions(), dim);
    let mut actor = ActorState::new(&policy);
    let mut critic = LinearLearner::for_kind(kind, dim);
    let mut lf = LambdaFunction::with_blocks(dim, features.blocks());
    let mut bundle = cfg.adapter.is_adaptive().then(|| {
        let mut b = AuxiliaryBundle::new(kind, dim, cfg.aux_mode);
        b.rate_multiplier = cfg.aux_rate_multiplier;
        b
    });
    let greedy = matches!(cfg.adapter, Adapter::Greedy);
    let lambda_of = |lf: &LambdaFunction, x: &[f64]| match cfg.adapter {
        Adapter::Fixed { lambda } => lambda,
        _ => lf.value(x),
    };
    let raw_of = |lf: &LambdaFunction, x: &[f64]| match cfg.adapter {
        Adapter::Fixed { lambda } => lambda,
        _ => lf.raw(x),
    };
    let buffer = (cfg.buffer_fraction * cfg.steps as f64).floor() as u64;
    let mut tracker = RangeTracker::new();

    let mut t: u64 = 0;
    'episodes: while t < cfg.steps {
        critic.reset_episode();
        actor.reset_episode();
        if let Some(b) = bundle.as_mut() {
            b.reset_episode();
        }
        let mut x = features.encode(&env.reset(&mut rng))?;
        let mut gamma_t = env.gamma();
        let mut lambda_t = lambda_of(&lf, &x);
        let mut ret = 0.0;
        let mut disc = 1.0;
        while t < cfg.steps {
            let probs = policy_probs(&policy, &x);
            let a = crate::mdp::sample_index(&probs, &mut rng);
            let out = env.step(a, &mut rng)?;
            let xn = features.encode(&out.obs)?;
            let gamma_next = out.gamma_next;
            let mut lambda_next = lambda_of(&lf, &xn);
            let v_next = critic.value(&xn);
            let delta = out.reward + gamma_next * v_next - critic.value(&x);

            if let Some(b) = bundle.as_mut() {
                let (aux_lt, aux_ln) = if greedy { (1.0, 1.0) } else { (lambda_t, lambda_next) };
                let ctx = StepContext {
                    x_t: &x,
                    x_next: &xn,
                    r: out.reward,
                    gamma_t,
                    gamma_next,
                    lambda_t: aux_lt,
                    lambda_next: aux_ln,
                    rho: 1.0,
                    alpha,
                    beta,
                };
                if let Err(e) = bundle_step(b, &ctx, delta, v_next) {
                    rec.divergence = Some(divergence_info(e, t));
                    break 'episodes;
                }
                if t >= buffer && !out.terminal {
                    let var = b.variance_counted(&xn);
                    let e_g = b.expected_return(&xn);
                    let outcome = match cfg.adapter {
                        Adapter::Meta { kappa } | Adapter::MetaNp { kappa } => {
                            let m = MetaStepInputs {
                                gamma_next,
                                rho_acc: 1.0,
                                v_next,
                                e_g,
                                e_glambda: b.expected_lambda_return(&xn),
                                var_glambda: var,
                                kappa,
                            };
                            meta_update(&mut lf, &xn, &m)
                        }
                        Adapter::Greedy => lf.assign(&xn, lambda_greedy_target(v_next, e_g, var)),
                        Adapter::Fixed { .. } => UpdateOutcome::Unchanged,
                    };
                    if outcome == UpdateOutcome::Cancelled {
                        rec.cancelled_updates += 1;
                    }
                    lambda_next = lambda_of(&lf, &xn);
                }
            }
            if !out.terminal {
                tracker.observe(raw_of(&lf, &xn));
            }

            let ctx = StepContext {
                x_t: &x,
                x_next: &xn,
                r: out.reward,
                gamma_t,
                gamma_next,
                lambda_t,
                lambda_next,
                rho: 1.0,
                alpha,
                beta,
            };
            if let Err(e) = critic.step(kind, &ctx) {
                rec.divergence = Some(divergence_info(e.tag_learner("critic"), t));
                break 'episodes;
            }
            if t >= buffer && cfg.eta != 0.0 {
                let grad = policy.grad_log(&x, a, &probs);
                let decay = gamma_t * cfg.actor_lambda;
                for (z, g) in actor.z_theta.iter_mut().zip(&grad) {
                    *z = decay * *z + actor.i * g;
                }
                let step = cfg.eta * delta;
                for (th, z) in policy.theta.iter_mut().zip(&actor.z_theta) {
                    *th += step * z;
                }
            }
            actor.i *= gamma_next;
            ret += disc * out.reward;
            disc *= gamma_next;
            t += 1;
            x = xn;
            gamma_t = gamma_next;
            lambda_t = lambda_next;
            if out.terminal {
                rec.series.push((t, ret));
                rec.lambda_ranges.extend(tracker.flush(t));
                continue 'episodes;
            }
        }
        // Budget ran out mid-episode.
        rec.truncated_return = Some(ret);
    }
    rec.lambda_ranges.extend(tracker.flush(t));
    rec.variance_clamps = bundle.as_ref().map_or(0, |b| b.clamp_count);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Observation;

    #[test]
    fn zero_theta_is_uniform() {
        let p = SoftmaxPolicy::new(3, 2);
        assert_eq!(policy_probs(&p, &[0.3, -1.0]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn shift_invariance() {
        let a = softmax(&[0.1, 2.0, -1.0]);
        let b = softmax(&[100.1, 102.0, 99.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0] == 1.0 && big[1] >= 0.0);
    }

    #[test]
    fn score_sums_to_zero() {
        let mut p = SoftmaxPolicy::new(3, 2);
        p.theta = vec![0.5, -0.2, 1.0, 0.3, -0.7, 0.1];
        let x = [0.4, 1.2];
        let probs = policy_probs(&p, &x);
        let mut total = vec![0.0; 6];
        for a in 0..3 {
            for (t, g) in total.iter_mut().zip(p.grad_log(&x, a, &probs)) {
                *t += probs[a] * g;
            }
        }
        assert!(total.iter().all(|v| v.abs() < 1e-12));
    }

    struct Bandit {
        done: bool,
    }

    impl Environment for Bandit {
        fn n_actions(&self) -> usize {
            2
        }
        fn gamma(&self) -> f64 {
            1.0
        }
        fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Observation {
            self.done = false;
            Observation::tabular(0)
        }
        fn step(&mut self, action: usize, _rng: &mut dyn rand::RngCore) -> Result<crate::env::StepResult> {
            self.done = true;
            Ok(crate::env::StepResult {
                obs: Observation::tabular(1),
                reward: action as f64,
                terminal: true,
                gamma_next: 0.0,
            })
        }
    }

    #[test]
    fn frozen_actor_keeps_policy_flat() {
        let fm = FeatureMap::onehot(2).unwrap();
        let cfg = ControlSettings { eta: 0.0, ..ControlSettings::new(Adapter::Fixed { lambda: 1.0 }, 0.1, 0.0, 2000) };
        let rec = meta_actor_critic(&mut Bandit { done: true }, &fm, &cfg, "b", 0, 0).unwrap();
        let mean = rec.series.iter().map(|p| p.1).sum::<f64>() / rec.series.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn bandit_learns_better_arm() {
        let fm = FeatureMap::onehot(2).unwrap();
        let cfg = ControlSettings { buffer_fraction: 0.0, ..ControlSettings::new(Adapter::Meta { kappa: 1e-3 }, 0.1, 0.1, 5000) };
        let rec = meta_actor_critic(&mut Bandit { done: true }, &fm, &cfg, "b", 0, 1).unwrap();
        let tail = &rec.series[rec.series.len() - 500..];
        assert!(tail.iter().map(|p| p.1).sum::<f64>() / 500.0 > 0.9);
        assert!(rec.lambda_within_unit_interval());
    }
}
