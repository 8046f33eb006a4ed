use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ic2vqa::adapters::VideoQualityMetric;
use ic2vqa::attack::write_delta;
use ic2vqa::eval::{
    correlation_protocol, feature_correlation_matrix, fmt_sig, iteration_curve, run_grid, summarize_all,
    CellOutcome, CorrelationSummary, CurvePoint, EvaluationTable, FeatureMatrix, GridOptions, IqaTap, Journal,
    ProtocolOptions, SweepAxis,
};
use ic2vqa::media::write_y4m;
use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::layout::Layout;
use crate::manifest::{now, RunManifest};
use crate::plot;
use crate::prepare::{load_videos, prepare_dir, Provenance};

pub fn cmd_prepare(dataset: &Path, pattern: &str, max_frames: usize, scale: usize, out: &Path) -> Result<Provenance> {
    let p = prepare_dir(dataset, pattern, max_frames, scale, out)?;
    println!("prepared {} clip(s) into {}", p.clips.len(), out.display());
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackOutcome {
    UpToDate,
    Ran { cells_run: usize, cells_failed: usize },
}

/// Runs every configured attack over the grid, writing per-cell artifacts,
/// the record journal, the sorted table and the manifest.
pub fn cmd_attack(cfg: &CampaignConfig) -> Result<AttackOutcome> {
    let layout = Layout::new(&cfg.output);
    let digest = cfg.digest();
    if layout.manifest().exists() {
        let previous = RunManifest::load(&layout.manifest())?;
        if previous.config_digest != digest {
            bail!(
                "{} holds a campaign with a different configuration (digest {}); choose another output directory",
                layout.root().display(),
                previous.config_digest
            );
        }
        if previous.completed {
            println!("up to date: {} (digest {digest})", layout.root().display());
            return Ok(AttackOutcome::UpToDate);
        }
    }
    std::fs::create_dir_all(layout.root()).with_context(|| format!("creating {}", layout.root().display()))?;
    let videos = load_videos(cfg, &layout)?;
    let mut manifest = match RunManifest::load(&layout.manifest()) {
        Ok(m) => m,
        Err(_) => RunManifest::new(cfg, videos.iter().map(|v| v.source_id.clone()).collect()),
    };
    manifest.save(&layout.manifest())?;

    let mut journal = Journal::open(layout.journal())?;
    let already = journal.records().len();
    let factory = || cfg.adapters.build_vqa(&cfg.vqa);
    let mut tables = Vec::new();
    for spec in &cfg.attacks {
        let plan = cfg.build_plan(spec)?;
        let mut write_cell = |cell: CellOutcome<'_>| -> ic2vqa::Result<()> {
            write_cell_artifacts(&layout, &cell).map_err(|e| ic2vqa::Error::Config(format!("{e:#}")))
        };
        let table = run_grid(
            &videos,
            &plan,
            &cfg.epsilons,
            &cfg.iterations,
            &factory,
            GridOptions { workers: cfg.workers },
            Some(&mut journal),
            &mut write_cell,
        )?;
        tables.push(table);
    }
    let records: Vec<_> = tables.into_iter().flat_map(|t| t.records).collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let table = EvaluationTable::with_grids(records, cfg.epsilons.clone(), cfg.iterations.clone());
    table.write_jsonl(layout.table_jsonl())?;
    table.write_csv(layout.table_csv())?;

    manifest.completed = true;
    manifest.cells_failed = failed;
    manifest.updated_at = now();
    manifest.save(&layout.manifest())?;
    let cells_run = journal.records().len() - already;
    println!(
        "attacked {} cell(s) ({} resumed, {} failed) into {}",
        cells_run,
        already,
        failed,
        layout.root().display()
    );
    Ok(AttackOutcome::Ran {
        cells_run,
        cells_failed: failed,
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    iteration: usize,
    metric: Option<&'a str>,
    xlayer: Option<f64>,
    embed: Option<f64>,
    temporal: Option<f64>,
    total: f64,
}

#[derive(Serialize)]
struct CellInfo {
    epsilon: f64,
    iterations: usize,
    max_abs_delta: f64,
    queries_used: u64,
    wall_time: f64,
    clean_score: f64,
    attacked_score: Option<f64>,
}

fn write_cell_artifacts(layout: &Layout, cell: &CellOutcome<'_>) -> Result<()> {
    let dir = layout.cell_dir(cell.record);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_delta(dir.join("delta.bin"), &cell.result.delta.data)?;
    write_y4m(cell.attacked, dir.join("attacked.y4m"))?;

    let mut out = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
    for t in &cell.result.loss_trace {
        let line = TraceLine {
            iteration: t.iteration,
            metric: t.metric.as_deref(),
            xlayer: t.loss.xlayer,
            embed: t.loss.embed,
            temporal: t.loss.temporal,
            total: t.loss.total,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    if !cell.result.score_trace.is_empty() {
        let mut out = BufWriter::new(File::create(dir.join("scores.jsonl"))?);
        for (step, score) in cell.result.score_trace.iter().enumerate() {
            writeln!(out, "{}", serde_json::json!({ "step": step, "score": score }))?;
        }
        out.flush()?;
    }
    let info = CellInfo {
        epsilon: cell.record.epsilon,
        iterations: cell.record.iterations,
        max_abs_delta: cell.result.delta.max_abs(),
        queries_used: cell.result.queries_used,
        wall_time: cell.result.wall_time,
        clean_score: cell.record.clean_score,
        attacked_score: cell.record.attacked_score,
    };
    std::fs::write(dir.join("cell.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(())
}

fn load_table(layout: &Layout) -> Result<EvaluationTable> {
    if !layout.manifest().exists() {
        return Err(anyhow!(ic2vqa::Error::NotFound(format!(
            "no campaign manifest in {}; run `attack` first",
            layout.root().display()
        ))));
    }
    let path = layout.table_jsonl();
    if !path.exists() {
        return Err(anyhow!(ic2vqa::Error::NotFound(format!(
            "no evaluation table at {}; run `attack` first",
            path.display()
        ))));
    }
    let manifest = RunManifest::load(&layout.manifest())?;
    let table = EvaluationTable::read_jsonl(&path)?;
    if table.records.is_empty() {
        return Err(anyhow!(ic2vqa::Error::NotFound(format!("{} holds no records", path.display()))));
    }
    Ok(EvaluationTable::with_grids(
        table.records,
        manifest.config.epsilons.clone(),
        manifest.config.iterations.clone(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_digest: String,
    pub summaries: Vec<CorrelationSummary>,
}

/// Correlation summaries for every attack in the campaign at `output`.
pub fn cmd_evaluate(output: &Path, opts: ProtocolOptions) -> Result<EvaluationReport> {
    let layout = Layout::new(output);
    let table = load_table(&layout)?;
    let manifest = RunManifest::load(&layout.manifest())?;
    let summaries = summarize_all(&table, opts)?;

    let mut csv = csv::Writer::from_path(layout.summary_csv())?;
    csv.write_record([
        "attack",
        "white_box_metric",
        "axis",
        "plcc_mean_abs",
        "srcc_mean_abs",
        "slices",
        "degenerate_slices",
        "skipped_slices",
    ])?;
    for s in &summaries {
        csv.write_record([
            s.attack.clone(),
            s.white_box_metric.clone(),
            axis_name(s.axis).to_string(),
            fmt_sig(s.plcc_mean_abs),
            fmt_sig(s.srcc_mean_abs),
            s.slices.to_string(),
            s.degenerate_slices.to_string(),
            s.skipped_slices.to_string(),
        ])?;
        let coverage = if s.skipped_slices > 0 {
            format!(" (coverage {}/{} slices)", s.slices, s.slices + s.skipped_slices)
        } else {
            String::new()
        };
        println!(
            "{:<24} {:<20} |PLCC| {:.3}  |SRCC| {:.3}{coverage}",
            s.attack, s.white_box_metric, s.plcc_mean_abs, s.srcc_mean_abs
        );
    }
    csv.flush()?;
    let report = EvaluationReport {
        config_digest: manifest.config_digest,
        summaries,
    };
    std::fs::write(layout.summary_json(), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Epsilon => "epsilon",
        SweepAxis::Iterations => "iterations",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Table,
    Curves,
    Heatmap,
}

/// Writes numeric report files plus rendered plots; returns the numeric
/// files. Plot failures are logged, not fatal.
pub fn cmd_report(output: &Path, kind: ReportKind, allow_partial: bool) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(output);
    let dir = layout.reports_dir();
    match kind {
        ReportKind::Table => {
            let table = load_table(&layout)?;
            std::fs::create_dir_all(&dir)?;
            let opts = ProtocolOptions {
                allow_partial,
                ..Default::default()
            };
            let summaries = table
                .attacks()
                .iter()
                .map(|a| correlation_protocol(&table, a, opts))
                .collect::<ic2vqa::Result<Vec<_>>>()?;
            let path = dir.join("table.csv");
            let mut csv = csv::Writer::from_path(&path)?;
            csv.write_record(["attack", "white_box_metric", "plcc_mean_abs", "srcc_mean_abs"])?;
            for s in &summaries {
                csv.write_record([
                    s.attack.clone(),
                    s.white_box_metric.clone(),
                    fmt_sig(s.plcc_mean_abs),
                    fmt_sig(s.srcc_mean_abs),
                ])?;
            }
            csv.flush()?;
            best_effort(plot::bar_chart(&dir.join("table.png"), &summaries));
            Ok(vec![path])
        }
        ReportKind::Curves => {
            let table = load_table(&layout)?;
            std::fs::create_dir_all(&dir)?;
            let mut series: Vec<(String, Vec<CurvePoint>)> = Vec::new();
            for attack in table.attacks() {
                let curve = iteration_curve(&table, &attack, allow_partial)?;
                series.push((attack, curve));
            }
            let path = dir.join("curves.csv");
            let mut csv = csv::Writer::from_path(&path)?;
            csv.write_record(["attack", "iterations", "plcc_median_abs", "srcc_median_abs"])?;
            for (attack, curve) in &series {
                for p in curve {
                    csv.write_record([attack.clone(), p.iterations.to_string(), fmt_sig(p.plcc), fmt_sig(p.srcc)])?;
                }
            }
            csv.flush()?;
            best_effort(plot::curves(&dir.join("curves.png"), &series));
            Ok(vec![path])
        }
        ReportKind::Heatmap => {
            if !layout.manifest().exists() {
                return Err(anyhow!(ic2vqa::Error::NotFound(format!(
                    "no campaign manifest in {}",
                    layout.root().display()
                ))));
            }
            let manifest = RunManifest::load(&layout.manifest())?;
            let cfg = &manifest.config;
            let matrix = heatmap_matrix(cfg, &layout)?;
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("heatmap.csv");
            write_matrix_csv(&path, &matrix)?;
            std::fs::write(dir.join("heatmap.json"), serde_json::to_string_pretty(&matrix)? + "\n")?;
            best_effort(plot::heatmap(&dir.join("heatmap.png"), &matrix));
            Ok(vec![path])
        }
    }
}

fn best_effort(r: Result<()>) {
    if let Err(e) = r {
        log::warn!("plot rendering failed: {e:#}");
    }
}

pub fn heatmap_matrix(cfg: &CampaignConfig, layout: &Layout) -> Result<FeatureMatrix> {
    let spec = cfg
        .heatmap
        .as_ref()
        .context("the configuration has no [report.heatmap] section")?;
    let videos = load_videos(cfg, layout)?;
    let vqa: Box<dyn VideoQualityMetric> = cfg.adapters.build_vqa(&cfg.vqa)?;
    let metrics = spec
        .columns
        .iter()
        .map(|(name, _)| cfg.adapters.build_iqa(name))
        .collect::<ic2vqa::Result<Vec<_>>>()?;
    let mut columns = Vec::new();
    for ((name, layers), metric) in spec.columns.iter().zip(&metrics) {
        for &layer in layers {
            columns.push(IqaTap {
                label: format!("{name}:{layer}"),
                metric: metric.as_ref(),
                layer,
            });
        }
    }
    Ok(feature_correlation_matrix(vqa.as_ref(), &spec.vqa_taps, &columns, &videos)?)
}

pub fn write_matrix_csv(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let mut csv = csv::Writer::from_path(path)?;
    let mut header = vec!["tap".to_string()];
    header.extend(m.columns.iter().cloned());
    csv.write_record(&header)?;
    for (label, row) in m.rows.iter().zip(&m.values) {
        let mut line = vec![label.clone()];
        line.extend(row.iter().map(|v| fmt_sig(*v)));
        csv.write_record(&line)?;
    }
    csv.flush()?;
    Ok(())
}
