use metatrace::aux::{dvtd_pseudo_transition, vtd_pseudo_transition};
use metatrace::control::{
    actor_critic_step, policy_probs, AcRates, AcTraceDecay, AcTransition, ActorState, SoftmaxPolicy,
};
use metatrace::dp;
use metatrace::env::{Environment, FrozenLake, NoisyMountainCar, RingWorld};
use metatrace::features::{FeatureMap, Observation, Offsets};
use metatrace::harness::stats::{wilcoxon_signed_rank, Alternative};
use metatrace::harness::{mean_std, run_sweep, ExperimentConfig};
use metatrace::learners::{lambda_returns_offline, n_step_return, LearnerKind, LinearLearner, StepContext};
use metatrace::mdp::{importance_ratio, sample_episode, DiscountFunction, FiniteMdp, Outcome, TabularPolicy, Transition};
use metatrace::meta::{meta_minimizer, meta_update, LambdaFunction, MetaStepInputs, UpdateOutcome};
use metatrace::meta::{meta_policy_evaluation, Adapter, PredictionProblem, PredictionSettings};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Random terminating MDP built from a seed: states 0..n non-terminal, n terminal.
fn seeded_mdp(seed: u64) -> (FiniteMdp, TabularPolicy, TabularPolicy, DiscountFunction) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=19);
    let k = rng.gen_range(1..=3);
    let mut tr = Vec::new();
    for _ in 0..n {
        let row = (0..k)
            .map(|_| {
                let p_end = rng.gen_range(0.05..0.6);
                let m = rng.gen_range(1..=n.min(3));
                let probs = simplex(&(0..m).map(|_| rng.gen_range(0.1..1.0)).collect::<Vec<_>>());
                let mut outs: Vec<Outcome> = probs
                    .iter()
                    .map(|p| Outcome { next: rng.gen_range(0..n), reward: rng.gen_range(-1.0..1.0), prob: (1.0 - p_end) * p })
                    .collect();
                outs.push(Outcome { next: n, reward: rng.gen_range(-1.0..1.0), prob: p_end });
                outs
            })
            .collect();
        tr.push(row);
    }
    tr.push(vec![Vec::new(); k]);
    let mut d0 = simplex(&(0..n).map(|_| rng.gen_range(0.1..1.0)).collect::<Vec<_>>());
    d0.push(0.0);
    let mut terminal = vec![false; n + 1];
    terminal[n] = true;
    let mdp = FiniteMdp::new(tr, d0, terminal).unwrap();
    let mut policy = || {
        let rows = (0..=n).map(|_| simplex(&(0..k).map(|_| rng.gen_range(0.1..1.0)).collect::<Vec<_>>())).collect();
        TabularPolicy::new(&mdp, rows).unwrap()
    };
    let (b, t) = (policy(), policy());
    let g = DiscountFunction::new(&mdp, (0..=n).map(|_| rng.gen_range(0.0..=0.95)).collect()).unwrap();
    (mdp, b, t, g)
}

fn quadratic_objective(lambda: f64, m: &MetaStepInputs) -> f64 {
    let g2 = m.gamma_next * m.gamma_next;
    let mean = (m.v_next - m.e_g) - lambda * (m.v_next - m.e_glambda);
    0.5 * g2 * (mean * mean + lambda * lambda * m.var_glambda)
}

fn ringworld_problem() -> PredictionProblem {
    let mdp = RingWorld::new(11).unwrap().as_finite_mdp();
    let b = RingWorld::policy(&mdp, 0.4).unwrap();
    let t = RingWorld::policy(&mdp, 0.35).unwrap();
    let g = DiscountFunction::constant(&mdp, 0.95).unwrap();
    let fm = FeatureMap::onehot(mdp.n_states()).unwrap();
    PredictionProblem::new(mdp, b, t, g, &fm, Observation::tabular).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn importance_ratio_has_unit_mean(seed in any::<u64>()) {
        let (mdp, b, t, _) = seeded_mdp(seed);
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let mean: f64 = (0..mdp.n_actions()).map(|a| b.prob(s, a) * importance_ratio(&t, &b, s, a).unwrap()).sum();
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_episodes_are_reproducible(seed in any::<u64>(), ep_seed in any::<u64>()) {
        let (mdp, b, t, g) = seeded_mdp(seed);
        let a = sample_episode(&mdp, &b, &t, &g, ep_seed, Some(500)).unwrap();
        let c = sample_episode(&mdp, &b, &t, &g, ep_seed, Some(500)).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn direct_and_iterative_values_agree(seed in any::<u64>()) {
        let (mdp, _, t, g) = seeded_mdp(seed);
        let direct = dp::solve_values_direct(&mdp, &t, &g).unwrap();
        let iter = dp::solve_values_iterative(&mdp, &t, &g, 1e-13, 1_000_000).unwrap();
        for (x, y) in direct.v.iter().zip(&iter.v) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        prop_assert!(dp::bellman_residual(&mdp, &t, &g, &direct) < 1e-10);
    }

    #[test]
    fn frequencies_are_a_fixed_point(seed in any::<u64>()) {
        let (mdp, b, _, _) = seeded_mdp(seed);
        let d = dp::solve_state_frequencies(&mdp, &b, 1e-15, 1_000_000).unwrap();
        prop_assert!((d.d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(dp::frequency_residual(&mdp, &b, &d) < 1e-8);
    }

    #[test]
    fn tile_coding_activates_one_tile_per_tiling(
        tilings in 1usize..9,
        tiles in 1usize..10,
        p in (-2.0f64..2.0, -0.1f64..0.1),
        seed in any::<u64>(),
    ) {
        for offsets in [Offsets::Even, Offsets::Random { seed }] {
            let fm = FeatureMap::tile_coding(vec![(-1.2, 0.6), (-0.07, 0.07)], tiles, tilings, offsets).unwrap();
            let obs = Observation::continuous(vec![p.0, p.1]);
            let x = fm.encode(&obs).unwrap();
            prop_assert_eq!(x.iter().sum::<f64>(), tilings as f64);
            prop_assert_eq!(x, fm.encode(&obs).unwrap());
        }
    }

    #[test]
    fn lambda_return_endpoints(rewards in prop::collection::vec(-1.0f64..1.0, 1..12), gamma in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..=rewards.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = rewards.len();
        let traj: Vec<Transition> = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| Transition { s: t, a: 0, r, s_next: t + 1, gamma_next: if t + 1 == len { 0.0 } else { gamma }, rho: 1.0 })
            .collect();
        let v = |s: usize| if s == len { 0.0 } else { values[s] };
        let zero = lambda_returns_offline(&traj, v, |_| 0.0);
        let one = lambda_returns_offline(&traj, v, |_| 1.0);
        for t in 0..len {
            prop_assert_eq!(zero[t], n_step_return(&traj, t, 1, v));
            prop_assert!((one[t] - n_step_return(&traj, t, len, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn vtd_pseudo_rewards_at_lambda_endpoints(r in -2.0f64..2.0, v in -2.0f64..2.0, m in -2.0f64..2.0, gamma in 0.0f64..=1.0, rho in 0.0f64..3.0) {
        let x = [1.0];
        let base = StepContext { x_t: &x, x_next: &x, r, gamma_t: gamma, gamma_next: gamma, lambda_t: 0.0, lambda_next: 0.0, rho, alpha: 0.1, beta: 0.1 };
        // λ' = 0: the target is the one-step return, so R̄ = (ρ(R + γV))² and nothing is carried.
        let (rb, gb) = vtd_pseudo_transition(&base, v, m);
        prop_assert!((rb - (rho * (r + gamma * v)).powi(2)).abs() < 1e-9);
        prop_assert_eq!(gb, 0.0);
        // λ' = 1: R̄ + γ̄ G'² must equal ρ²(R + γG')² for any G'.
        let one = StepContext { lambda_t: 1.0, lambda_next: 1.0, ..base };
        let (rb, gb) = vtd_pseudo_transition(&one, v, m);
        let g_next = m;
        let lhs = rb + gb * g_next * g_next;
        let rhs = rho * rho * (r + gamma * g_next).powi(2);
        prop_assert!((lhs - rhs).abs() < 1e-9);
        let (dr, dg) = dvtd_pseudo_transition(r, gamma, 0.5, rho);
        prop_assert_eq!((dr, dg), (r * r, (gamma * 0.5) * (gamma * 0.5)));
    }

    #[test]
    fn meta_update_descends(
        gamma in 0.1f64..=1.0,
        v in -2.0f64..2.0,
        eg in -2.0f64..2.0,
        egl in -2.0f64..2.0,
        var in 0.0f64..2.0,
        start in 0.0f64..=1.0,
    ) {
        let m = MetaStepInputs { gamma_next: gamma, rho_acc: 1.0, v_next: v, e_g: eg, e_glambda: egl, var_glambda: var, kappa: 0.05 };
        let x = [0.0, 1.0, 0.0];
        let mut lf = LambdaFunction::new(3);
        lf.assign(&x, start);
        let before = lf.value(&x);
        let outcome = meta_update(&mut lf, &x, &m);
        let after = lf.value(&x);
        let at_optimum = (before - meta_minimizer(&m)).abs() < 1e-12;
        match outcome {
            UpdateOutcome::Applied if !at_optimum => {
                prop_assert!(quadratic_objective(after, &m) < quadratic_objective(before, &m) + 1e-15);
            }
            UpdateOutcome::Cancelled => prop_assert_eq!(before, after),
            _ => {}
        }
    }

    #[test]
    fn tabular_readouts_stay_in_unit_interval(steps in prop::collection::vec((0usize..5, -3.0f64..3.0, -3.0f64..3.0, 0.0f64..3.0), 1..200)) {
        let n = 5;
        let mut lf = LambdaFunction::new(n);
        for (s, v, e, var) in steps {
            let mut x = vec![0.0; n];
            x[s] = 1.0;
            let m = MetaStepInputs { gamma_next: 1.0, rho_acc: 3.0, v_next: v, e_g: e, e_glambda: -e, var_glambda: var, kappa: 1.0 };
            meta_update(&mut lf, &x, &m);
            for k in 0..n {
                let mut y = vec![0.0; n];
                y[k] = 1.0;
                let raw = lf.raw(&y);
                prop_assert!((0.0..=1.0).contains(&raw), "raw readout {} at state {}", raw, k);
            }
        }
    }

    #[test]
    fn tile_coded_readouts_stay_in_unit_interval(
        steps in prop::collection::vec(((-1.2f64..0.6, -0.07f64..0.07), -3.0f64..3.0, -3.0f64..3.0, 0.0f64..3.0), 1..150),
        probes in prop::collection::vec((-1.2f64..0.6, -0.07f64..0.07), 20),
    ) {
        let fm = FeatureMap::tile_coding(vec![(-1.2, 0.6), (-0.07, 0.07)], 4, 3, Offsets::Even).unwrap();
        let mut lf = LambdaFunction::with_blocks(fm.dimension(), fm.blocks());
        let encode = |p: (f64, f64)| fm.encode(&Observation::continuous(vec![p.0, p.1])).unwrap();
        for (p, v, e, var) in steps {
            let m = MetaStepInputs { gamma_next: 1.0, rho_acc: 2.0, v_next: v, e_g: e, e_glambda: -e, var_glambda: var, kappa: 0.5 };
            meta_update(&mut lf, &encode(p), &m);
            for &q in &probes {
                let raw = lf.raw(&encode(q));
                prop_assert!((0.0..=1.0).contains(&raw), "raw readout {} at {:?}", raw, q);
            }
        }
    }

    #[test]
    fn softmax_score_has_zero_mean(theta in prop::collection::vec(-3.0f64..3.0, 12), x in prop::collection::vec(0.0f64..1.0, 4)) {
        let mut policy = SoftmaxPolicy::new(3, 4);
        policy.theta = theta;
        let probs = policy_probs(&policy, &x);
        let mut total = vec![0.0; 12];
        for a in 0..3 {
            for (t, g) in total.iter_mut().zip(policy.grad_log(&x, a, &probs)) {
                *t += probs[a] * g;
            }
        }
        prop_assert!(total.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cumulative_discount_is_product(gammas in prop::collection::vec(0.0f64..=1.0, 1..20)) {
        let mut policy = SoftmaxPolicy::new(2, 2);
        let mut actor = ActorState::new(&policy);
        let mut critic = LinearLearner::new(2);
        actor.reset_episode();
        let x = [1.0, 0.0];
        let mut product = 1.0;
        let mut g_t = 1.0;
        for &g in &gammas {
            let tr = AcTransition { x: &x, a: 0, r: 1.0, x_next: &x, gamma_t: g_t, gamma_next: g };
            actor_critic_step(&mut actor, &mut critic, &mut policy, &tr, AcRates { alpha_w: 0.1, alpha_theta: 0.1 }, AcTraceDecay { lambda_w: 0.5, lambda_theta: 0.5 }).unwrap();
            product *= g;
            g_t = g;
            prop_assert_eq!(actor.i, product);
        }
    }

    #[test]
    fn mean_lies_between_extremes(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let (mean, std) = mean_std(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(mean >= lo - 1e-9 && mean <= hi + 1e-9);
        prop_assert!(std >= 0.0);
    }

    #[test]
    fn wilcoxon_p_values_are_probabilities(x in prop::collection::vec(-5.0f64..5.0, 1..40), shift in -1.0f64..1.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + shift + (i as f64) * 1e-3).collect();
        if let (Ok(g), Ok(l)) = (wilcoxon_signed_rank(&x, &y, Alternative::Greater), wilcoxon_signed_rank(&x, &y, Alternative::Less)) {
            prop_assert!((0.0..=1.0).contains(&g.p_value) && (0.0..=1.0).contains(&l.p_value));
            prop_assert!(g.p_value + l.p_value >= 1.0 - 1e-12);
        }
    }
}

#[test]
fn importance_ratio_monte_carlo_mean() {
    let (mdp, b, t, _) = seeded_mdp(11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)) {
        let draws: Vec<f64> = (0..n).map(|_| importance_ratio(&t, &b, s, b.sample(s, &mut rng)).unwrap()).collect();
        let (mean, std) = mean_std(&draws).unwrap();
        assert!((mean - 1.0).abs() <= 3.0 * std / (n as f64).sqrt() + 1e-12, "state {s}: {mean}");
    }
}

#[test]
fn learners_stay_finite_on_ringworld() {
    let p = ringworld_problem();
    for kind in [LearnerKind::TdLambda, LearnerKind::TrueOnlineTd, LearnerKind::TrueOnlineGtd] {
        for alpha in [1e-5, 1e-3, 1e-2, 1e-1] {
            for lambda in [0.0, 0.9, 1.0] {
                let cfg = PredictionSettings::new(kind, Adapter::Fixed { lambda }, alpha, 10_000);
                let rec = meta_policy_evaluation(&p, &cfg, "finite", 0, 17);
                assert!(!rec.diverged(), "{kind:?} α={alpha} λ={lambda}");
                assert!(rec.series.iter().all(|(_, e)| e.is_finite()));
            }
        }
    }
}

#[test]
fn episodes_terminate_with_bounded_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ring = RingWorld::new(11).unwrap();
    let mut lake = FrozenLake::new();
    for _ in 0..100_000 {
        ring.reset(&mut rng);
        loop {
            let out = ring.step(rng.gen_range(0..2), &mut rng).unwrap();
            assert!([-1.0, 0.0, 1.0].contains(&out.reward));
            if out.terminal {
                break;
            }
        }
    }
    for _ in 0..10_000 {
        lake.reset(&mut rng);
        let mut steps = 0;
        loop {
            let out = lake.step(rng.gen_range(0..4), &mut rng).unwrap();
            assert!(out.reward == 0.0 || out.reward == 1.0);
            steps += 1;
            if out.terminal {
                break;
            }
            assert!(steps < 100_000);
        }
    }
    let mut car = NoisyMountainCar::new();
    car.reset(&mut rng);
    for _ in 0..1000 {
        let out = car.step(rng.gen_range(0..3), &mut rng).unwrap();
        assert_eq!(out.reward, -1.0);
        if out.terminal {
            break;
        }
    }
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = ExperimentConfig::parse(
        r#"
alphas = [0.01, 0.1]
lambdas = [0.5]
kappas = [0.01]
greedy = true
steps = 3000
runs = 3
base_seed = 12
log_interval = 500

[env]
kind = "ringworld"
behavior_left = 0.4
target_left = 0.35
"#,
    )
    .unwrap();
    let a = run_sweep(&cfg).unwrap();
    let b = run_sweep(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2 * 3 * 3);
}
