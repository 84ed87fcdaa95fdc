//! Sweep runner, aggregation, statistics and artifact emission.

pub mod aggregate;
pub mod config;
pub mod output;
pub mod plot;
pub mod stats;
pub mod sweep;

pub use aggregate::{aggregate, mean_std, table, CellSummary, Column, RunStatistic, Table};
pub use config::{Cell, EnvSpec, ExperimentConfig, Metric};
pub use plot::PlotKind;
pub use sweep::{derive_seed, prediction_problem, run_sweep};

use std::path::Path;

use crate::error::Result;
use crate::record::RunRecord;

/// Result of a sweep: its records plus their per-cell summary.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CellSummary>,
}

impl SweepOutcome {
    /// True when there was at least one cell and all of them diverged in every run.
    pub fn all_cells_divergent(&self) -> bool {
        !self.summaries.is_empty() && self.summaries.iter().all(CellSummary::all_divergent)
    }
}

pub fn run_and_aggregate(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let records = run_sweep(cfg)?;
    let summaries = aggregate(&cfg.cells(), &records, RunStatistic::for_config(cfg));
    Ok(SweepOutcome { records, summaries })
}

/// Runs the sweep and writes records, summary, table and metadata into `out`.
pub fn sweep_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutcome> {
    let outcome = run_and_aggregate(cfg)?;
    output::write_sweep(out, cfg, &outcome.records, &outcome.summaries)?;
    Ok(outcome)
}

/// Regenerates a plot and its CSV from a sweep directory.
pub fn emit_plots(dir: &Path, kind: PlotKind) -> Result<()> {
    let meta = output::read_metadata(dir)?;
    let control = meta.as_ref().is_some_and(|m| m.task == "control");
    let y_label = if control { "return" } else { "overall value error" };
    match kind {
        PlotKind::UCurve => {
            let path = dir.join(output::SUMMARY_CSV);
            let summaries = if path.exists() { output::read_summary(&path)? } else { Vec::new() };
            let pts = plot::ucurve_points(&summaries, control);
            plot::write_points(&dir.join("ucurve.csv"), &pts)?;
            plot::draw_ucurve(&dir.join("ucurve.svg"), &pts, y_label)
        }
        PlotKind::LearningCurve => {
            let path = dir.join(output::RECORDS_CSV);
            let rows = if path.exists() { output::read_records(&path)? } else { Vec::new() };
            let bin = match &meta {
                Some(m) if control => (m.steps / 50).max(1),
                Some(m) => m.log_interval,
                None => 1,
            };
            let pts = plot::curve_points(&rows, bin);
            plot::write_points(&dir.join("curve.csv"), &pts)?;
            plot::draw_curve(&dir.join("curve.svg"), &pts, meta.map(|m| m.buffer_step), y_label)
        }
    }
}
