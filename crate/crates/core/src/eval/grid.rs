//! Attack campaigns over an ε × I grid with a single journal writer.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::adapters::{EmbeddingModel, LayeredImageMetric, VideoQualityMetric};
use crate::attack::{
    cell_seed, run_ic2vqa_observed, run_noise, run_pgd_observed, run_square_observed, video_seed, AttackConfig,
    AttackKind, AttackResult,
};
use crate::error::{Error, Result};
use crate::media::VideoClip;
use crate::tensor::Tensor;

use super::table::{CellKey, EvaluationTable, Journal, Record};

/// A configured attack with its models, runnable at any grid cell.
pub struct AttackPlan {
    pub label: String,
    /// Everything but `epsilon`, `iterations` and the per-cell seed.
    pub template: AttackConfig,
    pub metrics: Vec<Box<dyn LayeredImageMetric>>,
    pub embedder: Option<Box<dyn EmbeddingModel>>,
    /// Square Attack query budget.
    pub query_budget: u64,
}

impl AttackPlan {
    pub fn new(label: impl Into<String>, template: AttackConfig) -> Self {
        Self {
            label: label.into(),
            template,
            metrics: Vec::new(),
            embedder: None,
            query_budget: 300,
        }
    }

    pub fn kind(&self) -> AttackKind {
        self.template.kind
    }

    /// Name of the white-box source, `none` for attacks that use no image
    /// metric.
    pub fn white_box_metric(&self) -> String {
        match self.template.kind {
            AttackKind::Ic2vqa | AttackKind::Pgd if !self.metrics.is_empty() => {
                self.metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
            }
            _ => "none".into(),
        }
    }

    /// The cell's configuration. Noise is seeded per video only so each
    /// video sees one fixed pattern scaled by ε.
    pub fn config_for(&self, video_id: &str, epsilon: f64, iterations: usize) -> AttackConfig {
        let mut cfg = self.template.clone();
        cfg.epsilon = epsilon;
        cfg.iterations = iterations;
        cfg.seed = match cfg.kind {
            AttackKind::Noise => video_seed(self.template.seed, video_id),
            _ => cell_seed(self.template.seed, video_id, epsilon, iterations),
        };
        cfg
    }

    pub fn run(
        &self,
        clip: &VideoClip,
        epsilon: f64,
        iterations: usize,
        vqa: &mut dyn VideoQualityMetric,
        observer: &mut dyn FnMut(&Tensor),
    ) -> Result<AttackResult> {
        let cfg = self.config_for(&clip.source_id, epsilon, iterations);
        cfg.validate()?;
        match cfg.kind {
            AttackKind::Ic2vqa => {
                let metrics: Vec<&dyn LayeredImageMetric> = self.metrics.iter().map(|m| m.as_ref()).collect();
                run_ic2vqa_observed(&cfg, clip, &metrics, self.embedder.as_deref(), observer)
            }
            AttackKind::Pgd => {
                let [metric] = self.metrics.as_slice() else {
                    return Err(Error::Config(format!(
                        "attack `{}`: PGD takes exactly one image metric, got {}",
                        self.label,
                        self.metrics.len()
                    )));
                };
                run_pgd_observed(&cfg, clip, metric.as_ref(), observer)
            }
            AttackKind::Square => run_square_observed(&cfg, clip, vqa, self.query_budget, observer),
            AttackKind::Noise => {
                let r = run_noise(&cfg, clip)?;
                observer(&r.delta.data);
                Ok(r)
            }
        }
    }
}

/// Builds a fresh VQA instance; each worker owns one.
pub type VqaFactory<'a> = dyn Fn() -> Result<Box<dyn VideoQualityMetric>> + Sync + 'a;

#[derive(Debug, Clone, Copy)]
pub struct GridOptions {
    pub workers: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

/// A freshly computed cell, handed to the writer.
pub struct CellOutcome<'a> {
    pub record: &'a Record,
    pub clean: &'a VideoClip,
    pub attacked: &'a VideoClip,
    pub result: &'a AttackResult,
}

struct Job {
    video: usize,
    epsilon: f64,
    iterations: usize,
}

type JobOutput = (usize, Result<(AttackResult, VideoClip, f64)>);

/// Runs `plan` on every (video, ε, I) cell not already in `journal` and
/// returns the plan's records. Cell failures become records carrying the
/// error. `on_cell` runs on the calling thread for each new cell before it
/// is journaled.
pub fn run_grid(
    videos: &[VideoClip],
    plan: &AttackPlan,
    epsilons: &[f64],
    iterations: &[usize],
    vqa_factory: &VqaFactory<'_>,
    opts: GridOptions,
    mut journal: Option<&mut Journal>,
    on_cell: &mut dyn FnMut(CellOutcome<'_>) -> Result<()>,
) -> Result<EvaluationTable> {
    if videos.is_empty() || epsilons.is_empty() || iterations.is_empty() {
        return Err(Error::Config("the grid needs at least one video, ε and iteration count".into()));
    }
    if let Some(bad) = epsilons.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::Config(format!("grid ε must be finite and non-negative, got {bad}")));
    }
    let white_box = plan.white_box_metric();
    let key = |video: &VideoClip, epsilon: f64, iterations: usize| CellKey {
        video_id: video.source_id.clone(),
        attack: plan.label.clone(),
        white_box_metric: white_box.clone(),
        epsilon_bits: epsilon.to_bits(),
        iterations,
    };

    let mut jobs = Vec::new();
    for (v, clip) in videos.iter().enumerate() {
        for &epsilon in epsilons {
            for &it in iterations {
                let done = journal.as_ref().is_some_and(|j| j.contains(&key(clip, epsilon, it)));
                if !done {
                    jobs.push(Job {
                        video: v,
                        epsilon,
                        iterations: it,
                    });
                }
            }
        }
    }
    log::info!(
        "attack `{}`: {} of {} cells to run",
        plan.label,
        jobs.len(),
        videos.len() * epsilons.len() * iterations.len()
    );

    let mut fresh = Vec::new();
    if !jobs.is_empty() {
        let mut scorer = vqa_factory()?;
        let clean_scores: Vec<f64> = videos.iter().map(|c| scorer.score_video(c)).collect::<Result<_>>()?;
        let next = AtomicUsize::new(0);
        let workers = opts.workers.clamp(1, jobs.len());
        let (tx, rx) = mpsc::channel::<JobOutput>();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers {
                let tx = tx.clone();
                let (jobs, next) = (&jobs, &next);
                scope.spawn(move || {
                    let mut vqa = match vqa_factory() {
                        Ok(v) => Some(v),
                        Err(e) => {
                            log::error!("worker could not build the video metric: {e}");
                            None
                        }
                    };
                    loop {
                        let idx = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(idx) else { break };
                        let out = match vqa.as_mut() {
                            Some(vqa) => run_cell(plan, &videos[job.video], job, vqa.as_mut()),
                            None => Err(Error::Config("video metric unavailable".into())),
                        };
                        if tx.send((idx, out)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for (idx, out) in rx {
                let job = &jobs[idx];
                let clip = &videos[job.video];
                let mut record = Record {
                    video_id: clip.source_id.clone(),
                    attack: plan.label.clone(),
                    attack_kind: plan.kind(),
                    white_box_metric: white_box.clone(),
                    epsilon: job.epsilon,
                    iterations: job.iterations,
                    clean_score: clean_scores[job.video],
                    attacked_score: None,
                    error: None,
                };
                match out {
                    Ok((result, attacked, score)) => {
                        record.attacked_score = Some(score);
                        on_cell(CellOutcome {
                            record: &record,
                            clean: clip,
                            attacked: &attacked,
                            result: &result,
                        })?;
                    }
                    Err(e) => {
                        log::warn!(
                            "cell {} ε={} I={} failed: {e}",
                            record.video_id,
                            record.epsilon,
                            record.iterations
                        );
                        record.error = Some(e.to_string());
                    }
                }
                if let Some(j) = journal.as_deref_mut() {
                    j.append(record.clone())?;
                }
                fresh.push(record);
            }
            Ok(())
        })?;
    }

    let mut records: Vec<Record> = match journal {
        Some(j) => j
            .records()
            .iter()
            .filter(|r| {
                r.attack == plan.label
                    && videos.iter().any(|v| v.source_id == r.video_id)
                    && epsilons.iter().any(|e| e.to_bits() == r.epsilon.to_bits())
                    && iterations.contains(&r.iterations)
            })
            .cloned()
            .collect(),
        None => Vec::new(),
    };
    if records.is_empty() {
        records = fresh;
    }
    Ok(EvaluationTable::with_grids(records, epsilons.to_vec(), iterations.to_vec()))
}

fn run_cell(
    plan: &AttackPlan,
    clip: &VideoClip,
    job: &Job,
    vqa: &mut dyn VideoQualityMetric,
) -> Result<(AttackResult, VideoClip, f64)> {
    let result = plan.run(clip, job.epsilon, job.iterations, vqa, &mut |_| {})?;
    let attacked = clip.perturbed(&result.delta.data)?;
    let score = vqa.score_video(&attacked)?;
    Ok((result, attacked, score))
}
