use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use super::aggregate::{mean_std, table, CellSummary};
use super::output::SeriesRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    UCurve,
    LearningCurve,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucurve" => Ok(PlotKind::UCurve),
            "curve" | "learning_curve" => Ok(PlotKind::LearningCurve),
            other => Err(Error::Config(format!("unknown plot kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// One series per method column: α against mean, META keeping its best κ per α.
pub fn ucurve_points(summaries: &[CellSummary], higher_is_better: bool) -> Vec<PlotPoint> {
    let t = table(summaries, higher_is_better);
    let mut out = Vec::new();
    for (j, col) in t.columns.iter().enumerate() {
        for (alpha, entries) in &t.rows {
            if let Some(s) = &entries[j] {
                if let (Some(mean), Some(std)) = (s.mean, s.std) {
                    out.push(PlotPoint { series: col.label(), x: *alpha, mean, std });
                }
            }
        }
    }
    out
}

/// Mean and std across non-divergent replicas after binning steps to multiples of `bin`.
pub fn curve_points(rows: &[SeriesRow], bin: u64) -> Vec<PlotPoint> {
    let bin = bin.max(1);
    let mut groups: BTreeMap<(String, u64), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.diverged) {
        let b = r.step.div_ceil(bin) * bin;
        groups.entry((r.cell.clone(), b)).or_default().entry(r.replica).or_default().push(r.value);
    }
    let mut out = Vec::new();
    for ((cell, step), reps) in groups {
        let per_replica: Vec<f64> = reps.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        if let Some((mean, std)) = mean_std(&per_replica) {
            out.push(PlotPoint { series: cell, x: step as f64, mean, std });
        }
    }
    out
}

fn series_of(points: &[PlotPoint]) -> Vec<(String, Vec<&PlotPoint>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<&PlotPoint>> = BTreeMap::new();
    for p in points {
        if !map.contains_key(&p.series) {
            order.push(p.series.clone());
        }
        map.entry(p.series.clone()).or_default().push(p);
    }
    order
        .into_iter()
        .map(|name| {
            let mut pts = map.remove(&name).unwrap_or_default();
            pts.sort_by(|a, b| a.x.total_cmp(&b.x));
            (name, pts)
        })
        .collect()
}

fn y_range(points: &[PlotPoint]) -> (f64, f64) {
    let lo = points.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-12);
    (lo - pad, hi + pad)
}

pub fn write_points(path: &Path, points: &[PlotPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// U-curve SVG with a log-scaled α axis and one line per method.
pub fn draw_ucurve(path: &Path, points: &[PlotPoint], y_label: &str) -> Result<()> {
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let xs = points.iter().map(|p| p.x);
    let (mut x_lo, mut x_hi) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    if !(x_lo.is_finite() && x_hi.is_finite()) {
        (x_lo, x_hi) = (1e-5, 1e-1);
    }
    if x_lo == x_hi {
        (x_lo, x_hi) = (x_lo / 2.0, x_hi * 2.0);
    }
    let (y_lo, y_hi) = y_range(points);
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((x_lo..x_hi).log_scale(), y_lo..y_hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("alpha")
        .y_desc(y_label)
        .x_label_formatter(&|x| format!("{x:e}"))
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series_of(points).into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.x, p.mean)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(pts.iter().map(|p| Circle::new((p.x, p.mean), 3, color.filled())))
            .map_err(plot_err)?;
    }
    if !points.is_empty() {
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Learning curves with shaded ±1 std and the end of the buffer period ticked on the x axis.
pub fn draw_curve(path: &Path, points: &[PlotPoint], buffer_step: Option<u64>, y_label: &str) -> Result<()> {
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let x_hi = points.iter().map(|p| p.x).fold(0.0, f64::max).max(buffer_step.unwrap_or(0) as f64).max(1.0);
    let (y_lo, y_hi) = y_range(points);
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..x_hi, y_lo..y_hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").y_desc(y_label).draw().map_err(plot_err)?;
    for (i, (name, pts)) in series_of(points).into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut band: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.mean + p.std)).collect();
        band.extend(pts.iter().rev().map(|p| (p.x, p.mean - p.std)));
        chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled()))).map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.x, p.mean)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    if let Some(b) = buffer_step.filter(|&b| b > 0) {
        let b = b as f64;
        let tick = (y_hi - y_lo) * 0.04;
        chart
            .draw_series(std::iter::once(PathElement::new(vec![(b, y_lo), (b, y_lo + tick)], BLACK.stroke_width(3))))
            .map_err(plot_err)?;
    }
    if !points.is_empty() {
        chart.configure_series_labels().border_style(BLACK).background_style(WHITE).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
