use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{project, AttackConfig, AttackKind, AttackResult, Perturbation};
use crate::adapters::VideoQualityMetric;
use crate::error::Result;
use crate::media::VideoClip;
use crate::tensor::Tensor;

/// Initial fraction of pixels a square covers.
const P_INIT: f64 = 0.05;

/// Square side for step `step` of `total`, following the usual piecewise
/// halving schedule of the patch area.
pub fn square_side(step: usize, total: usize, height: usize, width: usize) -> usize {
    let progress = if total == 0 { 0 } else { step * 10_000 / total };
    let divisor = match progress {
        0..=10 => 1.0,
        11..=50 => 2.0,
        51..=200 => 4.0,
        201..=500 => 8.0,
        501..=1000 => 16.0,
        1001..=2000 => 32.0,
        2001..=4000 => 64.0,
        4001..=6000 => 128.0,
        6001..=8000 => 256.0,
        _ => 512.0,
    };
    let p = P_INIT / divisor;
    let side = (p * (height * width) as f64).sqrt().round() as usize;
    side.clamp(1, height.min(width).saturating_sub(1).max(1))
}

fn random_sign(rng: &mut ChaCha8Rng, eps: f64) -> f64 {
    if rng.gen_bool(0.5) {
        eps
    } else {
        -eps
    }
}

/// Gradient-free random search: per-frame square patches set to `±ε`,
/// accepted when the video score increases. At most `query_budget` calls to
/// `score_video`; the first evaluates the starting point.
pub fn run_square(
    cfg: &AttackConfig,
    x: &VideoClip,
    vqa: &mut dyn VideoQualityMetric,
    query_budget: u64,
) -> Result<AttackResult> {
    run_square_observed(cfg, x, vqa, query_budget, &mut |_| {})
}

pub fn run_square_observed(
    cfg: &AttackConfig,
    x: &VideoClip,
    vqa: &mut dyn VideoQualityMetric,
    query_budget: u64,
    observer: &mut dyn FnMut(&Tensor),
) -> Result<AttackResult> {
    cfg.expect_kind(AttackKind::Square)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = x.frames();
    let [n, c, h, w] = frames.shape().try_into().expect("clip is 4-D");
    let eps = cfg.epsilon;

    // Vertical stripes of ±ε.
    let mut best = Tensor::zeros(frames.shape());
    for i in 0..n {
        for ch in 0..c {
            for col in 0..w {
                let v = random_sign(&mut rng, eps);
                for row in 0..h {
                    best.data_mut()[((i * c + ch) * h + row) * w + col] = v;
                }
            }
        }
    }
    project(&mut best, frames, eps, cfg.clamp_range);
    observer(&best);

    let mut queries = 0u64;
    let mut trace = Vec::new();
    if query_budget > 0 {
        let mut best_score = vqa.score_video(&x.perturbed(&best)?)?;
        queries += 1;
        trace.push(best_score);
        let steps = (cfg.iterations as u64).min(query_budget - 1) as usize;
        for step in 0..steps {
            let side = square_side(step, steps, h, w);
            let mut candidate = best.clone();
            for i in 0..n {
                let top = rng.gen_range(0..=h - side);
                let left = rng.gen_range(0..=w - side);
                for ch in 0..c {
                    let v = random_sign(&mut rng, eps);
                    let base = (i * c + ch) * h * w;
                    for row in top..top + side {
                        let start = base + row * w + left;
                        candidate.data_mut()[start..start + side].fill(v);
                    }
                }
            }
            project(&mut candidate, frames, eps, cfg.clamp_range);
            observer(&candidate);
            let score = vqa.score_video(&x.perturbed(&candidate)?)?;
            queries += 1;
            if score > best_score {
                best_score = score;
                best = candidate;
            }
            trace.push(best_score);
        }
    }
    Ok(AttackResult {
        delta: Perturbation {
            data: best,
            epsilon: eps,
        },
        loss_trace: Vec::new(),
        score_trace: trace,
        queries_used: queries,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
