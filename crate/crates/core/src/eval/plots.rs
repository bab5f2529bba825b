use std::path::Path;

use plotters::prelude::*;

use super::ablation::SweepReport;
use crate::error::{Error, Result};
use crate::training::EpochRecord;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn y_range(values: impl Iterator<Item = f64>) -> Result<std::ops::Range<f64>> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Plot("nothing finite to plot".into()));
    }
    let pad = ((hi - lo) * 0.1).max(1e-3);
    Ok(lo - pad..hi + pad)
}

/// Per-seed test MAE of each variant with the medians joined by a line.
pub fn plot_sweep(report: &SweepReport, path: &Path) -> Result<()> {
    let n = report.reports.len();
    let y = y_range(report.reports.iter().flat_map(|r| r.per_seed_mae.iter().copied()))?;
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{} sweep", report.sweep), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, y)
        .map_err(plot_err)?;
    let labels: Vec<String> = report.reports.iter().map(|r| r.variant.clone()).collect();
    chart
        .configure_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("test MAE (min)")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(report.reports.iter().enumerate().flat_map(|(i, r)| {
            r.per_seed_mae
                .iter()
                .map(move |&m| Circle::new((i as f64, m), 3, BLUE.mix(0.5).filled()))
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            report.reports.iter().enumerate().map(|(i, r)| (i as f64, r.median_mae)),
            RED.stroke_width(2),
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Training MAE per epoch, one line per labelled run.
pub fn plot_convergence(runs: &[(String, Vec<EpochRecord>)], path: &Path) -> Result<()> {
    let epochs = runs.iter().map(|(_, log)| log.len()).max().unwrap_or(0).max(2);
    let y = y_range(runs.iter().flat_map(|(_, log)| log.iter().map(|r| r.train_mae)))?;
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training MAE", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..(epochs - 1) as f64, y)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("MAE (min)")
        .draw()
        .map_err(plot_err)?;
    for (k, (label, log)) in runs.iter().enumerate() {
        let color = Palette99::pick(k).stroke_width(2);
        chart
            .draw_series(LineSeries::new(log.iter().map(|r| (r.epoch as f64, r.train_mae)), color))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], Palette99::pick(k)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
