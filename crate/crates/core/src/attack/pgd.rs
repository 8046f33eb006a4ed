use std::time::Instant;

use super::{project, AttackConfig, AttackKind, AttackResult, Perturbation};
use crate::adapters::LayeredImageMetric;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::media::VideoClip;
use crate::tensor::Tensor;

/// Mean score over frames of `x + δ` and its gradient w.r.t. `δ`. Frames are
/// independent, so the gradient of frame `i` only touches `δ_i`.
fn score_and_grad(metric: &dyn LayeredImageMetric, x: &Tensor, delta: &Tensor) -> Result<(f64, Tensor)> {
    let n = x.shape()[0];
    let frame_shape = x.shape()[1..].to_vec();
    let mut grad = Tensor::zeros(delta.shape());
    let mut total = 0.0;
    for i in 0..n {
        let mut g = Graph::new();
        let xi = g.input(&Tensor::new(frame_shape.clone(), x.slice(i).to_vec())?);
        let di = g.input(&Tensor::new(frame_shape.clone(), delta.slice(i).to_vec())?);
        let input = g.add(xi, di);
        let score = metric.trace_tap(&mut g, input, metric.num_layers())?;
        total += g.value(score)[0];
        grad.slice_mut(i).copy_from_slice(&g.backward(score, 1.0, di));
    }
    Ok((total / n as f64, grad))
}

/// Per-frame sign-gradient ascent on the image metric's score with step
/// `ε / I`, projecting after each step.
pub fn run_pgd(cfg: &AttackConfig, x: &VideoClip, metric: &dyn LayeredImageMetric) -> Result<AttackResult> {
    run_pgd_observed(cfg, x, metric, &mut |_| {})
}

pub fn run_pgd_observed(
    cfg: &AttackConfig,
    x: &VideoClip,
    metric: &dyn LayeredImageMetric,
    observer: &mut dyn FnMut(&Tensor),
) -> Result<AttackResult> {
    cfg.expect_kind(AttackKind::Pgd)?;
    if !metric.differentiable() {
        return Err(Error::Capability {
            adapter: metric.name().to_string(),
            capability: "gradients".into(),
        });
    }
    let start = Instant::now();
    let frames = x.frames();
    let mut delta = Tensor::zeros(frames.shape());
    let mut scores = Vec::with_capacity(cfg.iterations + 1);
    if cfg.iterations > 0 {
        let step = cfg.epsilon / cfg.iterations as f64;
        for _ in 0..cfg.iterations {
            let (score, grad) = score_and_grad(metric, frames, &delta)?;
            scores.push(score);
            for (d, g) in delta.data_mut().iter_mut().zip(grad.data()) {
                if *g != 0.0 {
                    *d += step * g.signum();
                }
            }
            project(&mut delta, frames, cfg.epsilon, cfg.clamp_range);
            observer(&delta);
        }
        scores.push(score_and_grad(metric, frames, &delta)?.0);
    }
    Ok(AttackResult {
        delta: Perturbation {
            data: delta,
            epsilon: cfg.epsilon,
        },
        loss_trace: Vec::new(),
        score_trace: scores,
        queries_used: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{make_toy_metric, score_image, ToyKind};
    use crate::media::synthetic_clip;

    #[test]
    fn single_step_is_signed_budget() {
        let x = synthetic_clip(0, 2, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let eps = 4.0 / 255.0;
        let mut cfg = AttackConfig::new(AttackKind::Pgd, eps, 1);
        cfg.clamp_range = false;
        let r = run_pgd(&cfg, &x, &m).unwrap();
        let (_, grad) = score_and_grad(&m, x.frames(), &Tensor::zeros(x.frames().shape())).unwrap();
        for (d, g) in r.delta.data.data().iter().zip(grad.data()) {
            if *g != 0.0 {
                assert_eq!(*d, eps * g.signum());
            }
        }
    }

    #[test]
    fn raises_the_attacked_metric() {
        let x = synthetic_clip(1, 2, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let cfg = AttackConfig::new(AttackKind::Pgd, 8.0 / 255.0, 5);
        let r = run_pgd(&cfg, &x, &m).unwrap();
        let attacked = x.perturbed(&r.delta.data).unwrap();
        for i in 0..x.num_frames() {
            let before = score_image(&m, &x.frame(i)).unwrap();
            let after = score_image(&m, &attacked.frame(i)).unwrap();
            assert!(after >= before, "frame {i}: {before} -> {after}");
        }
        assert!(r.delta.within_budget());
    }

    #[test]
    fn zero_budget_is_zero() {
        let x = synthetic_clip(2, 1, 16, 16).unwrap();
        let m = make_toy_metric(7, ToyKind::Iqa, 4).into_iqa().unwrap();
        let r = run_pgd(&AttackConfig::new(AttackKind::Pgd, 0.0, 3), &x, &m).unwrap();
        assert_eq!(r.delta.max_abs(), 0.0);
    }
}
