use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub learner: String,
    pub step: u64,
}

/// Range of unclamped λ readouts observed since the previous logging point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub step: u64,
    pub min: f64,
    pub max: f64,
}

/// One replica's output. `series` holds (step, overall value error) for prediction and
/// (step at episode end, return) for control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub replica: u32,
    pub seed: u64,
    pub steps: u64,
    pub series: Vec<(u64, f64)>,
    pub divergence: Option<DivergenceInfo>,
    pub lambda_snapshot: Vec<f64>,
    pub lambda_ranges: Vec<LambdaRange>,
    pub cancelled_updates: u64,
    pub variance_clamps: u64,
    pub max_rho_acc: f64,
    /// Return accumulated by an episode still running when the budget ran out (control).
    #[serde(default)]
    pub truncated_return: Option<f64>,
}

impl RunRecord {
    pub fn empty(cell: impl Into<String>, replica: u32, seed: u64, steps: u64) -> Self {
        Self {
            cell: cell.into(),
            replica,
            seed,
            steps,
            series: Vec::new(),
            divergence: None,
            lambda_snapshot: Vec::new(),
            lambda_ranges: Vec::new(),
            cancelled_updates: 0,
            variance_clamps: 0,
            max_rho_acc: 1.0,
            truncated_return: None,
        }
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Mean of the series over points whose step lies in the last `fraction` of the budget;
    /// falls back to the last point when the window is empty.
    pub fn window_mean(&self, fraction: f64) -> Option<f64> {
        let start = self.steps as f64 * (1.0 - fraction);
        let tail: Vec<f64> = self.series.iter().filter(|(s, _)| *s as f64 > start).map(|p| p.1).collect();
        if tail.is_empty() {
            self.final_value()
        } else {
            Some(tail.iter().sum::<f64>() / tail.len() as f64)
        }
    }

    /// Mean return of episodes ending after `step`. Without any, falls back to the partial
    /// return of the episode cut off by the budget, which bounds its true return from above.
    pub fn mean_return_after(&self, step: u64) -> Option<f64> {
        self.mean_after(step).or(self.truncated_return)
    }

    /// Mean of the series over points strictly after `step`.
    pub fn mean_after(&self, step: u64) -> Option<f64> {
        let tail: Vec<f64> = self.series.iter().filter(|(s, _)| *s > step).map(|p| p.1).collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn final_value(&self) -> Option<f64> {
        self.series.last().map(|p| p.1)
    }

    pub fn lambda_within_unit_interval(&self) -> bool {
        self.lambda_snapshot.iter().all(|l| (0.0..=1.0).contains(l))
            && self.lambda_ranges.iter().all(|r| r.min >= 0.0 && r.max <= 1.0)
    }
}

/// Running min/max tracker for λ readouts between logging points.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RangeTracker {
    min: f64,
    max: f64,
}

impl RangeTracker {
    pub fn new() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY }
    }

    #[inline]
    pub fn observe(&mut self, v: f64) {
        if v < self.min {
            self.min = v;
        }
        if v > self.max {
            self.max = v;
        }
    }

    pub fn flush(&mut self, step: u64) -> Option<LambdaRange> {
        let out = (self.min <= self.max).then_some(LambdaRange { step, min: self.min, max: self.max });
        *self = Self::new();
        out
    }
}

pub(crate) fn divergence_info(e: Error, step: u64) -> DivergenceInfo {
    match e {
        Error::Divergence { learner, .. } => DivergenceInfo { learner, step },
        other => DivergenceInfo { learner: other.to_string(), step },
    }
}
