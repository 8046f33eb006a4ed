use ic2vqa::adapters::{make_toy_metric, ToyKind};
use ic2vqa::attack::project;
use ic2vqa::eval::{linspace_decreasing, pearson, spearman};
use ic2vqa::losses::cross_layer_loss;
use ic2vqa::media::{read_y4m, write_y4m_to, VideoClip, Yuv420Frame};
use ic2vqa::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A clip whose frames decode from in-gamut 4:2:0 samples, so it sits
/// exactly on the Y4M lattice.
fn lattice_clip(seed: u64, frames: usize, height: usize, width: usize) -> VideoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cw, ch) = (width / 2, height / 2);
    let data: Vec<Tensor> = (0..frames)
        .map(|_| {
            let f = Yuv420Frame {
                width,
                height,
                y: (0..width * height).map(|_| rng.gen_range(56..=195)).collect(),
                u: (0..cw * ch).map(|_| rng.gen_range(108..=148)).collect(),
                v: (0..cw * ch).map(|_| rng.gen_range(108..=148)).collect(),
            };
            Tensor::new(vec![3, height, width], f.to_rgb()).unwrap()
        })
        .collect();
    VideoClip::new(Tensor::stack(&data).unwrap(), (25, 1), format!("lattice-{seed}")).unwrap()
}

fn vec_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..20).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lattice_clips_survive_y4m(seed in any::<u64>(), frames in 1usize..4, h in 4usize..10, w in 4usize..10) {
        let clip = lattice_clip(seed, frames, 2 * h, 2 * w);
        let mut buf = Vec::new();
        write_y4m_to(&clip, &mut buf).unwrap();
        let back = read_y4m(buf.as_slice(), &clip.source_id).unwrap();
        prop_assert_eq!(back.frames().data(), clip.frames().data());
    }

    #[test]
    fn projection_keeps_budget_and_range(
        seed in any::<u64>(),
        eps in 0.0f64..0.3,
        clamp in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * 3 * 4 * 4;
        let x = Tensor::new(vec![2, 3, 4, 4], (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap();
        let mut d = Tensor::new(vec![2, 3, 4, 4], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        project(&mut d, &x, eps, clamp);
        prop_assert!(d.max_abs() <= eps);
        if clamp {
            for (a, b) in x.data().iter().zip(d.data()) {
                prop_assert!((0.0..=1.0).contains(&(a + b)));
            }
        }
    }

    #[test]
    fn pearson_affine_behaviour((a, b) in vec_strategy(), k in 0.1f64..10.0, c in -3.0f64..3.0) {
        if let Ok(r) = pearson(&a, &b) {
            let up: Vec<f64> = a.iter().map(|v| k * v + c).collect();
            let down: Vec<f64> = a.iter().map(|v| -k * v + c).collect();
            prop_assert!((pearson(&up, &b).unwrap() - r).abs() < 1e-9);
            prop_assert!((pearson(&down, &b).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn spearman_ignores_monotone_maps((a, b) in vec_strategy()) {
        if let Ok(r) = spearman(&a, &b) {
            let cubed: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert_eq!(spearman(&cubed, &b).unwrap(), r);
            let reference = linspace_decreasing(a.len());
            let scaled: Vec<f64> = reference.iter().map(|v| 7.5 * v).collect();
            prop_assert_eq!(spearman(&a, &reference).unwrap(), spearman(&a, &scaled).unwrap());
        }
    }

    #[test]
    fn cross_layer_loss_is_a_mean_cosine(seed in 0u64..1000, k in 1usize..5) {
        let m = make_toy_metric(seed, ToyKind::Iqa, 2).into_iqa().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3 * 3 * 6 * 6;
        let x = Tensor::new(vec![3, 3, 6, 6], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let d = Tensor::new(vec![3, 3, 6, 6], (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap();
        let loss = cross_layer_loss(&m, k, &x, &d).unwrap();
        prop_assert!((-1.0..=1.0).contains(&loss));
        // Frame order does not matter.
        let rev = |t: &Tensor| Tensor::stack(&[t.sub_tensor(2), t.sub_tensor(0), t.sub_tensor(1)]).unwrap();
        prop_assert!((cross_layer_loss(&m, k, &rev(&x), &rev(&d)).unwrap() - loss).abs() < 1e-12);
    }
}
