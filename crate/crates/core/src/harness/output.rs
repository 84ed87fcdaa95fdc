use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::{table, CellSummary, Column};
use super::config::{ExperimentConfig, Metric};
use crate::error::{Error, Result};
use crate::meta::Adapter;
use crate::record::RunRecord;

pub const RECORDS_CSV: &str = "records.csv";
pub const RUNS_JSON: &str = "runs.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const METADATA_JSON: &str = "metadata.json";

/// Written next to the tables so that readers know how each number was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub task: String,
    pub statistic: String,
    pub steps: u64,
    pub buffer_step: u64,
    pub log_interval: u64,
    pub config: ExperimentConfig,
}

impl Metadata {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let statistic = if cfg.env.is_control() {
            "mean return of episodes ending after the buffer; the partial return of the unfinished episode when none did".to_string()
        } else {
            match cfg.metric {
                Metric::Window => format!("mean overall value error over the last {} of steps", cfg.window_fraction),
                Metric::Final => "overall value error at the last logged step".to_string(),
            }
        };
        Self {
            task: if cfg.env.is_control() { "control" } else { "prediction" }.into(),
            statistic,
            steps: cfg.steps,
            buffer_step: cfg.buffer_steps(),
            log_interval: cfg.log_interval,
            config: cfg.clone(),
        }
    }
}

fn adapter_fields(a: &Adapter) -> (&'static str, String) {
    match a {
        Adapter::Fixed { lambda } => ("fixed", lambda.to_string()),
        Adapter::Greedy => ("greedy", String::new()),
        Adapter::Meta { kappa } => ("meta", kappa.to_string()),
        Adapter::MetaNp { kappa } => ("meta_np", kappa.to_string()),
    }
}

fn parse_adapter(kind: &str, param: &str) -> Result<Adapter> {
    let num = || param.parse::<f64>().map_err(|e| Error::Config(format!("bad parameter {param:?}: {e}")));
    Ok(match kind {
        "fixed" => Adapter::Fixed { lambda: num()? },
        "greedy" => Adapter::Greedy,
        "meta" => Adapter::Meta { kappa: num()? },
        "meta_np" => Adapter::MetaNp { kappa: num()? },
        other => return Err(Error::Config(format!("unknown method {other:?}"))),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub cell: String,
    pub replica: u32,
    pub seed: u64,
    pub diverged: bool,
    pub step: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    cell: String,
    alpha: f64,
    method: String,
    parameter: String,
    mean: String,
    std: String,
    runs: usize,
    divergent: usize,
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        for &(step, value) in &r.series {
            w.serialize(SeriesRow {
                cell: r.cell.clone(),
                replica: r.replica,
                seed: r.seed,
                diverged: r.diverged(),
                step,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<SeriesRow>, _>>()?)
}

pub fn write_summary(path: &Path, summaries: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summaries {
        let (method, parameter) = adapter_fields(&s.adapter);
        w.serialize(SummaryRow {
            cell: s.cell.clone(),
            alpha: s.alpha,
            method: method.into(),
            parameter,
            mean: opt(s.mean),
            std: opt(s.std),
            runs: s.runs,
            divergent: s.divergent,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<CellSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
        }
    };
    r.deserialize::<SummaryRow>()
        .map(|row| {
            let row = row?;
            Ok(CellSummary {
                adapter: parse_adapter(&row.method, &row.parameter)?,
                cell: row.cell,
                alpha: row.alpha,
                mean: parse_opt(&row.mean)?,
                std: parse_opt(&row.std)?,
                runs: row.runs,
                divergent: row.divergent,
            })
        })
        .collect()
}

/// α rows with a mean and std column per method; META columns also name the chosen κ.
pub fn write_table(path: &Path, summaries: &[CellSummary], higher_is_better: bool) -> Result<()> {
    let t = table(summaries, higher_is_better);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["alpha".to_string()];
    for c in &t.columns {
        header.push(format!("{} mean", c.label()));
        header.push(format!("{} std", c.label()));
        if matches!(c, Column::Meta | Column::MetaNp) {
            header.push(format!("{} kappa", c.label()));
        }
    }
    w.write_record(&header)?;
    for (alpha, entries) in &t.rows {
        let mut row = vec![alpha.to_string()];
        for (c, e) in t.columns.iter().zip(entries) {
            let cell = |s: &CellSummary| {
                if s.all_divergent() {
                    ("divergent".to_string(), String::new())
                } else {
                    (opt(s.mean), opt(s.std))
                }
            };
            let (m, s) = e.as_ref().map(cell).unwrap_or_default();
            row.push(m);
            row.push(s);
            if matches!(c, Column::Meta | Column::MetaNp) {
                row.push(match e.as_ref().map(|s| s.adapter) {
                    Some(Adapter::Meta { kappa }) | Some(Adapter::MetaNp { kappa }) => kappa.to_string(),
                    _ => String::new(),
                });
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_metadata(dir: &Path) -> Result<Option<Metadata>> {
    let path = dir.join(METADATA_JSON);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

/// Writes every sweep artifact into `dir`.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, records: &[RunRecord], summaries: &[CellSummary]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(&dir.join(RECORDS_CSV), records)?;
    write_json(&dir.join(RUNS_JSON), &records.iter().map(RunSummary::from).collect::<Vec<_>>())?;
    write_summary(&dir.join(SUMMARY_CSV), summaries)?;
    write_table(&dir.join(TABLE_CSV), summaries, cfg.env.is_control())?;
    write_json(&dir.join(METADATA_JSON), &Metadata::new(cfg))
}

/// Per-run bookkeeping without the series, which lives in the records CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cell: String,
    pub replica: u32,
    pub seed: u64,
    pub divergence: Option<crate::record::DivergenceInfo>,
    pub lambda_snapshot: Vec<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub cancelled_updates: u64,
    pub variance_clamps: u64,
    pub max_rho_acc: f64,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        let min = r.lambda_ranges.iter().map(|l| l.min).reduce(f64::min);
        let max = r.lambda_ranges.iter().map(|l| l.max).reduce(f64::max);
        Self {
            cell: r.cell.clone(),
            replica: r.replica,
            seed: r.seed,
            divergence: r.divergence.clone(),
            lambda_snapshot: r.lambda_snapshot.clone(),
            lambda_min: min,
            lambda_max: max,
            cancelled_updates: r.cancelled_updates,
            variance_clamps: r.variance_clamps,
            max_rho_acc: r.max_rho_acc,
        }
    }
}
