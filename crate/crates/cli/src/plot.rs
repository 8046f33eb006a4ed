//! Best-effort PNG renderings of report data. The images carry no text;
//! the CSV files beside them hold the labels and values.

use std::path::Path;

use anyhow::{anyhow, Result};
use ic2vqa::eval::{CorrelationSummary, CurvePoint, FeatureMatrix};
use plotters::prelude::*;

const SIZE: (u32, u32) = (800, 500);
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("{e:?}")
}

fn frame<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    x: std::ops::Range<f64>,
    y: std::ops::Range<f64>,
) -> Result<ChartContext<'_, DB, Cartesian2d<plotters::coord::types::RangedCoordf64, plotters::coord::types::RangedCoordf64>>>
{
    let mut chart = ChartBuilder::on(area).margin(30).build_cartesian_2d(x.clone(), y.clone()).map_err(err)?;
    let axis = BLACK.stroke_width(2);
    chart
        .draw_series(LineSeries::new([(x.start, y.start), (x.end, y.start)], axis))
        .map_err(err)?;
    chart
        .draw_series(LineSeries::new([(x.start, y.start), (x.start, y.end)], axis))
        .map_err(err)?;
    for k in 1..=4 {
        let yy = y.start + (y.end - y.start) * k as f64 / 4.0;
        chart
            .draw_series(LineSeries::new([(x.start, yy), (x.end, yy)], RGBColor(220, 220, 220)))
            .map_err(err)?;
    }
    Ok(chart)
}

/// Paired bars per attack: |PLCC| then |SRCC| (lighter), on a `[0, 1]` axis.
pub fn bar_chart(path: &Path, summaries: &[CorrelationSummary]) -> Result<()> {
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let n = summaries.len().max(1) as f64;
    let mut chart = frame(&root, 0.0..n, 0.0..1.0)?;
    for (i, s) in summaries.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let x = i as f64;
        chart
            .draw_series([
                Rectangle::new([(x + 0.1, 0.0), (x + 0.45, s.plcc_mean_abs)], c.filled()),
                Rectangle::new([(x + 0.55, 0.0), (x + 0.9, s.srcc_mean_abs)], c.mix(0.5).filled()),
            ])
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// One line per series: median |SRCC| against iteration count.
pub fn curves(path: &Path, series: &[(String, Vec<CurvePoint>)]) -> Result<()> {
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let max_it = series
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.iterations))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut chart = frame(&root, 0.0..max_it, 0.0..1.0)?;
    for (i, (_, curve)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.iterations as f64, p.srcc)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), c.stroke_width(3)))
            .map_err(err)?;
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, c.filled())))
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Cells shaded from blue (−100) through white (0) to red (100).
pub fn heatmap(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let rows = m.rows.len().max(1) as f64;
    let cols = m.columns.len().max(1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .margin(30)
        .build_cartesian_2d(0.0..cols, 0.0..rows)
        .map_err(err)?;
    for (p, row) in m.values.iter().enumerate() {
        for (q, &v) in row.iter().enumerate() {
            let t = (v / 100.0).clamp(-1.0, 1.0);
            let fade = |x: f64| (255.0 * (1.0 - x.abs())) as u8;
            let color = if t >= 0.0 {
                RGBColor(255, fade(t), fade(t))
            } else {
                RGBColor(fade(t), fade(t), 255)
            };
            let y = rows - 1.0 - p as f64;
            chart
                .draw_series([Rectangle::new([(q as f64, y), (q as f64 + 1.0, y + 1.0)], color.filled())])
                .map_err(err)?;
        }
    }
    root.present().map_err(err)
}
