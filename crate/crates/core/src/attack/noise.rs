use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{project, AttackConfig, AttackKind, AttackResult, Perturbation};
use crate::error::Result;
use crate::media::VideoClip;
use crate::tensor::Tensor;

/// Non-adversarial control: `δ = ε·u` with `u ~ U[−1, 1]` drawn from
/// `cfg.seed`. The same seed gives the same pattern at every ε.
pub fn run_noise(cfg: &AttackConfig, x: &VideoClip) -> Result<AttackResult> {
    cfg.expect_kind(AttackKind::Noise)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = x.frames();
    let data = (0..frames.len())
        .map(|_| cfg.epsilon * rng.gen_range(-1.0..=1.0))
        .collect();
    let mut delta = Tensor::new(frames.shape().to_vec(), data)?;
    project(&mut delta, frames, cfg.epsilon, cfg.clamp_range);
    Ok(AttackResult {
        delta: Perturbation {
            data: delta,
            epsilon: cfg.epsilon,
        },
        loss_trace: Vec::new(),
        score_trace: Vec::new(),
        queries_used: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::synthetic_clip;

    #[test]
    fn noise_respects_budget_and_seed() {
        let x = synthetic_clip(0, 2, 16, 16).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Noise, 5.0 / 255.0, 0);
        cfg.seed = 9;
        let a = run_noise(&cfg, &x).unwrap();
        assert!(a.delta.within_budget());
        assert_eq!(a.delta.data, run_noise(&cfg, &x).unwrap().delta.data);
    }
}
