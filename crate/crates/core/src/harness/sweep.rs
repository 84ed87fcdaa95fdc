use rayon::prelude::*;

use super::config::{Cell, EnvSpec, ExperimentConfig};
use crate::control::{meta_actor_critic, ControlSettings};
use crate::env::{FrozenLake, NoisyMountainCar, RingWorld};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Observation};
use crate::mdp::{DiscountFunction, FiniteMdp, TabularPolicy};
use crate::meta::{meta_policy_evaluation, PredictionProblem, PredictionSettings};
use crate::record::RunRecord;

pub const THREADS_ENV: &str = "META_TRACE_THREADS";

/// Seed for one replica. Cells share it so that every λ rule sees the same random stream
/// within a replica, which makes cell comparisons paired.
pub fn derive_seed(base: u64, replica: u32) -> u64 {
    let mut z = base ^ (replica as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the prediction problem (and its DP ground truth) for a tabular environment.
pub fn prediction_problem(cfg: &ExperimentConfig) -> Result<PredictionProblem> {
    let gamma = cfg.gamma();
    let build = |mdp: FiniteMdp, b, t, default: FeatureMap, observe: &dyn Fn(usize) -> Observation| {
        let g = DiscountFunction::constant(&mdp, gamma)?;
        let features = cfg.features.clone().unwrap_or(default);
        PredictionProblem::new(mdp, b, t, g, &features, observe)
    };
    match &cfg.env {
        EnvSpec::Ringworld { n, behavior_left, target_left } => {
            let mdp = RingWorld::new(*n)?.as_finite_mdp();
            let b = RingWorld::policy(&mdp, *behavior_left)?;
            let t = RingWorld::policy(&mdp, *target_left)?;
            let n_states = mdp.n_states();
            build(mdp, b, t, FeatureMap::onehot(n_states)?, &Observation::tabular)
        }
        EnvSpec::Frozenlake => {
            let mdp = FrozenLake::new().as_finite_mdp();
            let b = FrozenLake::behavior_policy(&mdp);
            let t = FrozenLake::target_policy(&mdp);
            build(mdp, b, t, FrozenLake::default_features(), &FrozenLake::observation)
        }
        EnvSpec::Mdp { mdp, behavior, target } => {
            let m = FiniteMdp::load(cfg.resolve(mdp))?;
            let b = TabularPolicy::load(&m, cfg.resolve(behavior))?;
            let t = TabularPolicy::load(&m, cfg.resolve(target))?;
            let n_states = m.n_states();
            build(m, b, t, FeatureMap::onehot(n_states)?, &Observation::tabular)
        }
        EnvSpec::Mountaincar => Err(Error::Config("MountainCar is a control environment".into())),
    }
}

fn prediction_settings(cfg: &ExperimentConfig, cell: &Cell) -> PredictionSettings {
    let mut s = PredictionSettings::new(cfg.learner, cell.adapter, cell.alpha, cfg.steps);
    s.aux_mode = cfg.aux_mode;
    s.aux_rate_multiplier = cfg.aux_rate_multiplier;
    s.buffer_fraction = cfg.buffer_fraction();
    s.log_interval = cfg.log_interval;
    s
}

fn control_settings(cfg: &ExperimentConfig, cell: &Cell) -> ControlSettings {
    let mut s = ControlSettings::new(cell.adapter, cell.alpha, cfg.eta, cfg.steps);
    s.actor_lambda = cfg.actor_lambda;
    s.aux_mode = cfg.aux_mode;
    s.aux_rate_multiplier = cfg.aux_rate_multiplier;
    s.buffer_fraction = cfg.buffer_fraction();
    s
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every (cell, replica) pair. Records come back sorted by cell order, then replica,
/// regardless of scheduling. Divergence is recorded per run and never aborts the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, u32)> =
        (0..cells.len()).flat_map(|c| (0..cfg.runs).map(move |r| (c, r))).collect();
    let pool = pool()?;
    log::info!("{} cells x {} runs on {} threads", cells.len(), cfg.runs, pool.current_num_threads());
    if cfg.env.is_control() {
        let features = cfg.features.clone().unwrap_or_else(NoisyMountainCar::default_features);
        pool.install(|| {
            jobs.par_iter()
                .map(|&(c, r)| {
                    let cell = &cells[c];
                    let mut env = NoisyMountainCar::new();
                    env.gamma = cfg.gamma();
                    let seed = derive_seed(cfg.base_seed, r);
                    meta_actor_critic(&mut env, &features, &control_settings(cfg, cell), &cell.id(), r, seed)
                })
                .collect()
        })
    } else {
        let problem = prediction_problem(cfg)?;
        Ok(pool.install(|| {
            jobs.par_iter()
                .map(|&(c, r)| {
                    let cell = &cells[c];
                    let seed = derive_seed(cfg.base_seed, r);
                    meta_policy_evaluation(&problem, &prediction_settings(cfg, cell), &cell.id(), r, seed)
                })
                .collect()
        }))
    }
}
