use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aux::VarianceMode;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Offsets, TileCoder};
use crate::learners::LearnerKind;
use crate::meta::Adapter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Ringworld {
        #[serde(default = "default_ring_size")]
        n: usize,
        behavior_left: f64,
        target_left: f64,
    },
    Frozenlake,
    Mountaincar,
    /// MDP and policies from JSON files; paths are relative to the config file.
    Mdp { mdp: PathBuf, behavior: PathBuf, target: PathBuf },
}

fn default_ring_size() -> usize {
    11
}

impl EnvSpec {
    pub fn is_control(&self) -> bool {
        matches!(self, EnvSpec::Mountaincar)
    }

    pub fn default_gamma(&self) -> f64 {
        match self {
            EnvSpec::Ringworld { .. } => 0.95,
            EnvSpec::Frozenlake | EnvSpec::Mountaincar | EnvSpec::Mdp { .. } => 1.0,
        }
    }
}

/// Table statistic for prediction runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Window,
    Final,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(Metric::Window),
            "final" => Ok(Metric::Final),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// A sweep over α × (fixed λ ∪ greedy ∪ META κ) cells, each run `runs` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Discount for non-terminal states; defaults to the environment's.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_learner")]
    pub learner: LearnerKind,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub kappas: Vec<f64>,
    #[serde(default)]
    pub greedy: bool,
    /// Also run META over one-hot state features for every κ.
    #[serde(default)]
    pub meta_np: bool,
    #[serde(default)]
    pub aux_mode: VarianceMode,
    #[serde(default = "default_multiplier")]
    pub aux_rate_multiplier: f64,
    /// Defaults to 0.1 for prediction and 0.5 for control.
    #[serde(default)]
    pub buffer_fraction: Option<f64>,
    pub steps: u64,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    /// Actor step size (control only).
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub actor_lambda: f64,
    /// Overrides the environment's default feature map.
    #[serde(default)]
    pub features: Option<FeatureMap>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_learner() -> LearnerKind {
    LearnerKind::TrueOnlineGtd
}
fn default_multiplier() -> f64 {
    2.0
}
fn default_runs() -> u32 {
    1
}
fn default_log_interval() -> u64 {
    1000
}
fn default_window() -> f64 {
    0.05
}
fn default_eta() -> f64 {
    1.0
}

/// One grid cell: a step size paired with a λ rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: f64,
    pub adapter: Adapter,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("alpha={:e}/{}", self.alpha, self.adapter.label())
    }
}

impl ExperimentConfig {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.env.default_gamma())
    }

    pub fn buffer_fraction(&self) -> f64 {
        self.buffer_fraction.unwrap_or(if self.env.is_control() { 0.5 } else { 0.1 })
    }

    pub fn buffer_steps(&self) -> u64 {
        (self.buffer_fraction() * self.steps as f64).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.alphas.is_empty() {
            return bad("alpha grid is empty".into());
        }
        if self.lambdas.is_empty() && self.kappas.is_empty() && !self.greedy {
            return bad("no λ rule: give lambdas, kappas or greedy = true".into());
        }
        if self.runs < 1 {
            return bad("runs must be at least 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return bad(format!("alpha {a} must be positive"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return bad(format!("lambda {l} outside [0, 1]"));
        }
        if let Some(k) = self.kappas.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
            return bad(format!("kappa {k} must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.buffer_fraction()) {
            return bad(format!("buffer fraction {} outside [0, 1)", self.buffer_fraction()));
        }
        if !(0.0..=1.0).contains(&self.gamma()) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma()));
        }
        if self.log_interval == 0 {
            return bad("log interval must be positive".into());
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return bad(format!("window fraction {} outside (0, 1]", self.window_fraction));
        }
        if !(self.aux_rate_multiplier >= 0.0) {
            return bad("aux rate multiplier must be non-negative".into());
        }
        if let EnvSpec::Ringworld { n, behavior_left, target_left } = self.env {
            if n % 2 == 0 {
                return bad(format!("RingWorld needs an odd number of states, got {n}"));
            }
            for p in [behavior_left, target_left] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("probability {p} outside [0, 1]"));
                }
            }
        }
        if let Some(FeatureMap::TileCoding(t)) = &self.features {
            TileCoder::new(t.bounds.clone(), t.tiles_per_dim, t.n_tilings, Offsets::Explicit(t.offsets.clone()))?;
        }
        if self.env.is_control() && self.meta_np {
            return bad("meta_np needs a tabular environment".into());
        }
        Ok(())
    }

    /// Cells in a fixed order: per α, the λ columns, then greedy, then META (and META-np) per κ.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            let mut push = |adapter| out.push(Cell { alpha, adapter });
            self.lambdas.iter().for_each(|&lambda| push(Adapter::Fixed { lambda }));
            if self.greedy {
                push(Adapter::Greedy);
            }
            self.kappas.iter().for_each(|&kappa| push(Adapter::Meta { kappa }));
            if self.meta_np {
                self.kappas.iter().for_each(|&kappa| push(Adapter::MetaNp { kappa }));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
alphas = [1e-3, 1e-2]
lambdas = [0.0, 1.0]
kappas = [1e-3]
greedy = true
steps = 1000
runs = 2

[env]
kind = "ringworld"
behavior_left = 0.4
target_left = 0.35
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::parse(TOML).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b = ExperimentConfig::parse(&json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gamma(), 0.95);
        assert_eq!(a.buffer_steps(), 100);
    }

    #[test]
    fn cell_grid() {
        let cfg = ExperimentConfig::parse(TOML).unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 2 * 4);
        assert_eq!(cells[0].id(), "alpha=1e-3/lambda=0");
        assert_eq!(cells[2].adapter, Adapter::Greedy);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            TOML.replace("runs = 2", "runs = 0"),
            TOML.replace("alphas = [1e-3, 1e-2]", "alphas = []"),
            TOML.replace("lambdas = [0.0, 1.0]", "lambdas = [1.5]"),
            TOML.replace("steps = 1000", "steps = 1000\nbuffer_fraction = 1.0"),
            TOML.replace("steps = 1000", "steps = 1000\nunknown = 3"),
        ] {
            assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
