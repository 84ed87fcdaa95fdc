use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Cell, ExperimentConfig, Metric};
use crate::meta::Adapter;
use crate::record::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub alpha: f64,
    pub adapter: Adapter,
    /// `None` when every run diverged or produced no data.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: usize,
    pub divergent: usize,
}

impl CellSummary {
    pub fn all_divergent(&self) -> bool {
        self.runs > 0 && self.divergent == self.runs
    }
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

/// How one run is reduced to the table statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatistic {
    /// Mean over the last `fraction` of the step budget.
    Window(f64),
    Final,
    /// Mean return of episodes ending after a step (see `RunRecord::mean_return_after`).
    ReturnAfter(u64),
}

impl RunStatistic {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        if cfg.env.is_control() {
            RunStatistic::ReturnAfter(cfg.buffer_steps())
        } else {
            match cfg.metric {
                Metric::Window => RunStatistic::Window(cfg.window_fraction),
                Metric::Final => RunStatistic::Final,
            }
        }
    }

    pub fn apply(&self, r: &RunRecord) -> Option<f64> {
        match *self {
            RunStatistic::Window(f) => r.window_mean(f),
            RunStatistic::Final => r.final_value(),
            RunStatistic::ReturnAfter(s) => r.mean_return_after(s),
        }
    }
}

/// Per-cell mean/std over non-divergent runs, in cell order. Divergent runs are counted, not used.
pub fn aggregate(cells: &[Cell], records: &[RunRecord], stat: RunStatistic) -> Vec<CellSummary> {
    let mut by_cell: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry(r.cell.clone()).or_default().push(r);
    }
    cells
        .iter()
        .map(|cell| {
            let id = cell.id();
            let runs = by_cell.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let divergent = runs.iter().filter(|r| r.diverged()).count();
            let values: Vec<f64> =
                runs.iter().filter(|r| !r.diverged()).filter_map(|r| stat.apply(r)).collect();
            let ms = mean_std(&values);
            CellSummary {
                cell: id,
                alpha: cell.alpha,
                adapter: cell.adapter,
                mean: ms.map(|m| m.0),
                std: ms.map(|m| m.1),
                runs: runs.len(),
                divergent,
            }
        })
        .collect()
}

/// Column of the α-by-method table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    Lambda(String),
    Greedy,
    Meta,
    MetaNp,
}

impl Column {
    pub fn of(adapter: &Adapter) -> Self {
        match adapter {
            Adapter::Fixed { lambda } => Column::Lambda(format!("{lambda}")),
            Adapter::Greedy => Column::Greedy,
            Adapter::Meta { .. } => Column::Meta,
            Adapter::MetaNp { .. } => Column::MetaNp,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Column::Lambda(l) => format!("lambda={l}"),
            Column::Greedy => "greedy".into(),
            Column::Meta => "meta".into(),
            Column::MetaNp => "meta_np".into(),
        }
    }
}

/// α rows × method columns. META columns keep the κ with the lowest mean for each α, so that
/// a lower-is-better statistic is assumed; pass `higher_is_better` for returns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<(f64, Vec<Option<CellSummary>>)>,
}

pub fn table(summaries: &[CellSummary], higher_is_better: bool) -> Table {
    let mut columns: Vec<Column> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    for s in summaries {
        let c = Column::of(&s.adapter);
        if !columns.contains(&c) {
            columns.push(c);
        }
        if !alphas.contains(&s.alpha) {
            alphas.push(s.alpha);
        }
    }
    let better = |a: f64, b: f64| if higher_is_better { a > b } else { a < b };
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let entries = columns
                .iter()
                .map(|col| {
                    let mut best: Option<CellSummary> = None;
                    for s in summaries.iter().filter(|s| s.alpha == alpha && Column::of(&s.adapter) == *col) {
                        best = match (&best, s.mean) {
                            (None, _) => Some(s.clone()),
                            (Some(b), Some(m)) if b.mean.map_or(true, |bm| better(m, bm)) => Some(s.clone()),
                            _ => best,
                        };
                    }
                    best
                })
                .collect();
            (alpha, entries)
        })
        .collect();
    Table { columns, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::DivergenceInfo;

    fn rec(cell: &Cell, replica: u32, values: &[f64]) -> RunRecord {
        let mut r = RunRecord::empty(cell.id(), replica, 0, values.len() as u64);
        r.series = values.iter().enumerate().map(|(i, &v)| (i as u64 + 1, v)).collect();
        r
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), Some((2.0, 0.0)));
        let (m, _) = mean_std(&[1e-3, 3e-3]).unwrap();
        assert!((m - 2e-3).abs() < 1e-18);
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn divergent_runs_are_counted_and_excluded() {
        let cell = Cell { alpha: 0.1, adapter: Adapter::Fixed { lambda: 1.0 } };
        let mut bad = rec(&cell, 1, &[1e9]);
        bad.divergence = Some(DivergenceInfo { learner: "value".into(), step: 1 });
        let recs = vec![rec(&cell, 0, &[1.0]), bad];
        let s = aggregate(&[cell], &recs, RunStatistic::Final);
        assert_eq!((s[0].mean, s[0].runs, s[0].divergent), (Some(1.0), 2, 1));
        assert!(!s[0].all_divergent());

        let mut only_bad = rec(&cell, 0, &[]);
        only_bad.divergence = Some(DivergenceInfo { learner: "value".into(), step: 0 });
        let s = aggregate(&[cell], &[only_bad], RunStatistic::Final);
        assert!(s[0].all_divergent());
        assert_eq!(s[0].mean, None);
    }

    #[test]
    fn table_keeps_best_kappa() {
        let cells = [
            Cell { alpha: 0.1, adapter: Adapter::Fixed { lambda: 0.5 } },
            Cell { alpha: 0.1, adapter: Adapter::Meta { kappa: 1e-3 } },
            Cell { alpha: 0.1, adapter: Adapter::Meta { kappa: 1e-2 } },
        ];
        let recs = vec![rec(&cells[0], 0, &[3.0]), rec(&cells[1], 0, &[2.0]), rec(&cells[2], 0, &[1.0])];
        let t = table(&aggregate(&cells, &recs, RunStatistic::Final), false);
        assert_eq!(t.columns, vec![Column::Lambda("0.5".into()), Column::Meta]);
        let meta = t.rows[0].1[1].as_ref().unwrap();
        assert_eq!(meta.adapter, Adapter::Meta { kappa: 1e-2 });
        let t = table(&aggregate(&cells, &recs, RunStatistic::Final), true);
        assert_eq!(t.rows[0].1[1].as_ref().unwrap().adapter, Adapter::Meta { kappa: 1e-3 });
    }
}
