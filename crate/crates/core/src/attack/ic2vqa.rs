use std::time::Instant;

use super::{check_delta_shape, init_perturbation, project, Adam, AttackConfig, AttackKind, AttackResult, MultiMetricMode, Perturbation, TraceEntry};
use crate::adapters::{EmbeddingModel, LayeredImageMetric};
use crate::error::{Error, Result};
use crate::losses::{LossContext, MetricSelection};
use crate::media::VideoClip;

/// Consistent multi-metric attack: for each iteration and each image metric,
/// one Adam step on that metric's cross-layer loss plus the enabled
/// embedding and temporal terms, followed by projection.
pub fn run_ic2vqa(
    cfg: &AttackConfig,
    x: &VideoClip,
    metrics: &[&dyn LayeredImageMetric],
    embedder: Option<&dyn EmbeddingModel>,
) -> Result<AttackResult> {
    run_ic2vqa_observed(cfg, x, metrics, embedder, &mut |_| {})
}

/// [`run_ic2vqa`] calling `observer` with `δ` after every projection.
pub fn run_ic2vqa_observed(
    cfg: &AttackConfig,
    x: &VideoClip,
    metrics: &[&dyn LayeredImageMetric],
    embedder: Option<&dyn EmbeddingModel>,
    observer: &mut dyn FnMut(&crate::Tensor),
) -> Result<AttackResult> {
    cfg.expect_kind(AttackKind::Ic2vqa)?;
    if cfg.loss.use_xlayer && metrics.is_empty() {
        return Err(Error::Config("the attack needs at least one image metric".into()));
    }
    if let Some(m) = metrics.iter().find(|m| !m.differentiable()) {
        return Err(Error::Capability {
            adapter: m.name().to_string(),
            capability: "gradients".into(),
        });
    }
    if let Some(e) = embedder.filter(|e| !e.differentiable()) {
        return Err(Error::Capability {
            adapter: e.name().to_string(),
            capability: "gradients".into(),
        });
    }
    let start = Instant::now();
    let frames = x.frames();
    let mut delta = init_perturbation(frames.shape());
    check_delta_shape(x, &delta)?;
    project(&mut delta, frames, cfg.epsilon, cfg.clamp_range);
    observer(&delta);

    let mut trace = Vec::new();
    if cfg.iterations > 0 {
        let ctx = LossContext::new(&cfg.loss, metrics, embedder, frames)?;
        let mut adam = Adam::new(delta.len(), cfg.step_size);
        let selections: Vec<MetricSelection> = match cfg.mode {
            MultiMetricMode::Sequential if ctx.num_metrics() > 0 => {
                (0..ctx.num_metrics()).map(MetricSelection::Single).collect()
            }
            _ => vec![MetricSelection::All],
        };
        for iteration in 0..cfg.iterations {
            for selection in &selections {
                let (loss, grad) = ctx.evaluate(&delta, *selection, true)?;
                let grad = grad.expect("gradient requested");
                adam.step(delta.data_mut(), grad.data());
                project(&mut delta, frames, cfg.epsilon, cfg.clamp_range);
                observer(&delta);
                let metric = match selection {
                    MetricSelection::Single(f) => ctx.metric_name(*f).map(str::to_string),
                    MetricSelection::All => None,
                };
                trace.push(TraceEntry {
                    iteration,
                    metric,
                    loss,
                });
            }
        }
    }
    Ok(AttackResult {
        delta: Perturbation {
            data: delta,
            epsilon: cfg.epsilon,
        },
        loss_trace: trace,
        score_trace: Vec::new(),
        queries_used: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{make_toy_metric, ToyKind};
    use crate::losses::{cross_layer_loss, LossConfig};
    use crate::media::synthetic_clip;

    fn cfg(eps: f64, iters: usize) -> AttackConfig {
        let mut c = AttackConfig::new(AttackKind::Ic2vqa, eps, iters);
        c.loss = LossConfig {
            use_xlayer: true,
            use_embed: false,
            use_temporal: false,
            ..Default::default()
        };
        c.loss.layer_per_metric.insert("toy-iqa-7".into(), 2);
        c
    }

    #[test]
    fn zero_iterations_returns_projected_init() {
        let x = synthetic_clip(0, 2, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let r = run_ic2vqa(&cfg(5.0 / 255.0, 0), &x, &[&m], None).unwrap();
        assert!(r.loss_trace.is_empty());
        let mut expected = init_perturbation(x.frames().shape());
        project(&mut expected, x.frames(), 5.0 / 255.0, true);
        assert_eq!(r.delta.data, expected);
    }

    #[test]
    fn zero_budget_gives_zero_perturbation() {
        let x = synthetic_clip(1, 2, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let r = run_ic2vqa(&cfg(0.0, 3), &x, &[&m], None).unwrap();
        assert_eq!(r.delta.max_abs(), 0.0);
    }

    #[test]
    fn loss_decreases_over_twenty_iterations() {
        let x = synthetic_clip(2, 3, 32, 32).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let c = cfg(10.0 / 255.0, 20);
        let r = run_ic2vqa(&c, &x, &[&m], None).unwrap();
        assert_eq!(r.loss_trace.len(), 20);
        let first = r.loss_trace[0].loss.xlayer.unwrap();
        let last = r.loss_trace.last().unwrap().loss.xlayer.unwrap();
        let end = cross_layer_loss(&m, 2, x.frames(), &r.delta.data).unwrap();
        assert!(last < first && end < first, "{first} {last} {end}");
        assert!(r.delta.within_budget());
    }

    #[test]
    fn trace_has_one_entry_per_metric_step() {
        let x = synthetic_clip(3, 2, 16, 16).unwrap();
        let a = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let b = make_toy_metric(8, ToyKind::Iqa, 4).into_iqa().unwrap();
        let mut c = cfg(5.0 / 255.0, 3);
        c.loss.layer_per_metric.insert("toy-iqa-8".into(), 1);
        let r = run_ic2vqa(&c, &x, &[&a, &b], None).unwrap();
        assert_eq!(r.loss_trace.len(), 6);
        assert_eq!(r.loss_trace[1].metric.as_deref(), Some("toy-iqa-8"));

        c.mode = MultiMetricMode::Summed;
        let r = run_ic2vqa(&c, &x, &[&a, &b], None).unwrap();
        assert_eq!(r.loss_trace.len(), 3);
    }

    #[test]
    fn deterministic() {
        let x = synthetic_clip(4, 2, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let e = make_toy_metric(7, ToyKind::Embed, 4).into_embedder().unwrap();
        let mut c = cfg(5.0 / 255.0, 4);
        c.loss.use_embed = true;
        c.loss.use_temporal = true;
        let a = run_ic2vqa(&c, &x, &[&m], Some(&e)).unwrap();
        let b = run_ic2vqa(&c, &x, &[&m], Some(&e)).unwrap();
        assert_eq!(a.delta.data, b.delta.data);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let x = synthetic_clip(4, 1, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let mut c = cfg(0.01, 1);
        c.kind = AttackKind::Pgd;
        assert!(run_ic2vqa(&c, &x, &[&m], None).is_err());
    }
}
