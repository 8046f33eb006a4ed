//! L∞-bounded attacks: the consistent multi-metric feature attack, a
//! per-frame PGD baseline, a Square Attack random search against a black-box
//! video metric, and a uniform-noise control.
//!
//! Every attack projects after each update so that `max|δ| ≤ ε` holds at
//! every observed step with zero tolerance.

mod adam;
mod dump;
mod ic2vqa;
mod noise;
mod pgd;
mod square;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::Adam;
pub use dump::{read_delta, write_delta};
pub use ic2vqa::{run_ic2vqa, run_ic2vqa_observed};
pub use noise::run_noise;
pub use pgd::{run_pgd, run_pgd_observed};
pub use square::{run_square, run_square_observed, square_side};

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig};
use crate::media::VideoClip;
use crate::tensor::Tensor;

/// Value every element of a fresh perturbation starts at.
pub const INIT_VALUE: f64 = 1.0 / 255.0;
pub const DEFAULT_STEP_SIZE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Ic2vqa,
    Pgd,
    Square,
    Noise,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Ic2vqa => "ic2vqa",
            AttackKind::Pgd => "pgd",
            AttackKind::Square => "square",
            AttackKind::Noise => "noise",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ic2vqa" => Ok(AttackKind::Ic2vqa),
            "pgd" => Ok(AttackKind::Pgd),
            "square" => Ok(AttackKind::Square),
            "noise" => Ok(AttackKind::Noise),
            other => Err(Error::Config(format!(
                "unknown attack kind `{other}` (expected ic2vqa, pgd, square or noise)"
            ))),
        }
    }
}

/// How several image metrics share one optimizer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiMetricMode {
    /// One optimizer step per metric per iteration.
    #[default]
    Sequential,
    /// One step per iteration on the α-weighted sum.
    Summed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub iterations: usize,
    /// Adam learning rate (unrelated to the metric weights `α_f`).
    pub step_size: f64,
    pub loss: LossConfig,
    pub kind: AttackKind,
    pub seed: u64,
    pub clamp_range: bool,
    pub mode: MultiMetricMode,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64, iterations: usize) -> Self {
        Self {
            epsilon,
            iterations,
            step_size: DEFAULT_STEP_SIZE,
            loss: LossConfig::default(),
            kind,
            seed: 0,
            clamp_range: true,
            mode: MultiMetricMode::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push(format!("epsilon must lie in [0,1], got {}", self.epsilon));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            problems.push(format!("step_size must be positive, got {}", self.step_size));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn expect_kind(&self, kind: AttackKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::Config(format!(
                "attack configured as {} but run as {kind}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// An additive perturbation with its L∞ budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub data: Tensor,
    pub epsilon: f64,
}

impl Perturbation {
    pub fn max_abs(&self) -> f64 {
        self.data.max_abs()
    }

    pub fn within_budget(&self) -> bool {
        self.data.data().iter().all(|v| v.abs() <= self.epsilon)
    }
}

/// Constant `1/255` perturbation of the given shape.
pub fn init_perturbation(shape: &[usize]) -> Tensor {
    Tensor::full(shape, INIT_VALUE)
}

/// Clamps `δ` to `[−ε, ε]` and, with `clamp_range`, also so that `x + δ`
/// stays in `[0, 1]`.
pub fn project(delta: &mut Tensor, x: &Tensor, epsilon: f64, clamp_range: bool) {
    debug_assert_eq!(delta.shape(), x.shape());
    for (d, &xv) in delta.data_mut().iter_mut().zip(x.data()) {
        let mut v = d.clamp(-epsilon, epsilon);
        if clamp_range {
            if xv + v > 1.0 {
                v = (1.0 - xv).clamp(-epsilon, epsilon);
            } else if xv + v < 0.0 {
                v = (-xv).clamp(-epsilon, epsilon);
            }
            // Rounding in `x + δ` must not step outside the unit range.
            while xv + v > 1.0 {
                v = v.next_down();
            }
            while xv + v < 0.0 {
                v = v.next_up();
            }
        }
        *d = v;
    }
}

/// One recorded optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Image metric the step targeted (sequential mode), if any.
    pub metric: Option<String>,
    /// Loss at the perturbation the step started from.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub delta: Perturbation,
    pub loss_trace: Vec<TraceEntry>,
    /// PGD: mean image-metric score per step. Square: best video score after
    /// every query.
    pub score_trace: Vec<f64>,
    pub queries_used: u64,
    pub wall_time: f64,
}

/// Per-run seed: the campaign seed mixed with a stable hash of the cell.
pub fn cell_seed(base: u64, video_id: &str, epsilon: f64, iterations: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(video_id.as_bytes());
    h.update([0]);
    h.update(epsilon.to_bits().to_le_bytes());
    h.update((iterations as u64).to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_le_bytes(bytes)
}

/// Stable hash of a video id, for seeds that must not depend on ε or I.
pub fn video_seed(base: u64, video_id: &str) -> u64 {
    let digest = Sha256::digest(video_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_le_bytes(bytes)
}

pub(crate) fn check_delta_shape(x: &VideoClip, delta: &Tensor) -> Result<()> {
    x.frames().check_same_shape(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_constant() {
        let d = init_perturbation(&[2, 3, 8, 8]);
        assert!(d.data().iter().all(|&v| v == 1.0 / 255.0));
        assert_eq!(d.max_abs(), 1.0 / 255.0);
    }

    #[test]
    fn zero_budget_projects_to_zero() {
        let x = Tensor::full(&[1, 3, 8, 8], 0.5);
        let mut d = init_perturbation(x.shape());
        project(&mut d, &x, 0.0, true);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_examples() {
        let eps = 10.0 / 255.0;
        let x = Tensor::new(vec![3], vec![0.5, 0.5, 0.99]).unwrap();
        let mut d = Tensor::new(vec![3], vec![0.5, -0.1, eps]).unwrap();
        project(&mut d, &x, eps, true);
        assert_eq!(d.data()[0], eps);
        assert_eq!(d.data()[1], -eps);
        assert!((d.data()[2] - 0.01).abs() < 1e-12);
        assert!(x.data()[2] + d.data()[2] <= 1.0);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("pgd".parse::<AttackKind>().unwrap(), AttackKind::Pgd);
        assert!("attackvqa".parse::<AttackKind>().is_err());
    }

    #[test]
    fn config_validation_flags_every_problem() {
        let mut cfg = AttackConfig::new(AttackKind::Ic2vqa, 2.0, 1);
        cfg.step_size = 0.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilon") && msg.contains("step_size"), "{msg}");
    }

    #[test]
    fn cell_seeds_differ_by_cell() {
        let a = cell_seed(1, "v", 1.0 / 255.0, 2);
        assert_eq!(a, cell_seed(1, "v", 1.0 / 255.0, 2));
        assert_ne!(a, cell_seed(1, "v", 2.0 / 255.0, 2));
        assert_ne!(a, cell_seed(1, "w", 1.0 / 255.0, 2));
    }
}
