//! Analytic loss gradients against central finite differences.

use ic2vqa::adapters::{make_toy_metric, ToyKind};
use ic2vqa::losses::{
    cross_layer_loss, cross_layer_loss_grad, embed_similarity_loss, embed_similarity_loss_grad, multi_metric_loss,
    multi_metric_loss_grad, temporal_loss, temporal_loss_grad, WeightedMetric,
};
use ic2vqa::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: [usize; 4] = [2, 3, 4, 4];
const STEP: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = SHAPE.iter().product();
    Tensor::new(SHAPE.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn finite_difference(f: impl Fn(&Tensor) -> f64, delta: &Tensor) -> Vec<f64> {
    (0..delta.len())
        .map(|i| {
            let mut plus = delta.clone();
            plus.data_mut()[i] += STEP;
            let mut minus = delta.clone();
            minus.data_mut()[i] -= STEP;
            (f(&plus) - f(&minus)) / (2.0 * STEP)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = ic2vqa::tensor::norm2(analytic).max(ic2vqa::tensor::norm2(numeric)).max(1e-8);
    diff / scale
}

#[test]
fn cross_layer_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..8 {
        let m = make_toy_metric(case, ToyKind::Iqa, 3).into_iqa().unwrap();
        let k = 1 + (case as usize % 4);
        let x = random(&mut rng, 0.1, 0.9);
        let delta = random(&mut rng, -0.05, 0.05);
        let (_, g) = cross_layer_loss_grad(&m, k, &x, &delta).unwrap();
        let fd = finite_difference(|d| cross_layer_loss(&m, k, &x, d).unwrap(), &delta);
        let err = relative_error(g.data(), &fd);
        assert!(err < 1e-3, "case {case} layer {k}: {err}");
    }
}

#[test]
fn multi_metric_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..6u64 {
        let a = make_toy_metric(case, ToyKind::Iqa, 3).into_iqa().unwrap();
        let b = make_toy_metric(case + 100, ToyKind::Iqa, 2).into_iqa().unwrap();
        let metrics = [
            WeightedMetric { metric: &a, layer: 2, weight: 1.0 },
            WeightedMetric { metric: &b, layer: 4, weight: 0.5 + case as f64 * 0.3 },
        ];
        let x = random(&mut rng, 0.1, 0.9);
        let delta = random(&mut rng, -0.05, 0.05);
        let (_, g) = multi_metric_loss_grad(&metrics, &x, &delta).unwrap();
        let fd = finite_difference(|d| multi_metric_loss(&metrics, &x, d).unwrap(), &delta);
        assert!(relative_error(g.data(), &fd) < 1e-3, "case {case}");
    }
}

#[test]
fn embedding_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..6 {
        let e = make_toy_metric(case, ToyKind::Embed, 3).into_embedder().unwrap();
        let x = random(&mut rng, 0.1, 0.9);
        let delta = random(&mut rng, -0.05, 0.05);
        let (_, g) = embed_similarity_loss_grad(&e, &x, &delta).unwrap();
        let fd = finite_difference(|d| embed_similarity_loss(&e, &x, d).unwrap(), &delta);
        assert!(relative_error(g.data(), &fd) < 1e-3, "case {case}");
    }
}

#[test]
fn temporal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10 {
        let delta = random(&mut rng, -0.05, 0.05);
        let (_, g) = temporal_loss_grad(&delta).unwrap();
        let fd = finite_difference(|d| temporal_loss(d).unwrap(), &delta);
        assert!(relative_error(g.data(), &fd) < 1e-3, "case {case}");
    }
}
