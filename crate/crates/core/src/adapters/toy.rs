//! Deterministic fixed-weight convolutional stand-ins for the pretrained
//! image metrics, video metrics and embedders.
//!
//! All three kinds built from one seed share the same backbone weights; only
//! their heads differ.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_frame_size, global_pool, Capabilities, EmbeddingModel, LayeredImageMetric, VideoQualityMetric};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::media::VideoClip;
use crate::nn::{ChannelNorm, Conv2d, Linear};
use crate::tensor::Tensor;

pub const BACKBONE_STAGES: usize = 4;
/// Backbone taps plus the score tap.
pub const TOY_LAYERS: usize = BACKBONE_STAGES + 1;
pub const TOY_MIN_INPUT: usize = 4;
pub const DEFAULT_WIDTH: usize = 4;
pub const DEFAULT_EMBED_DIM: usize = 32;
pub const EMBED_INPUT: usize = 32;

const STREAM_BACKBONE: u64 = 0;
const STREAM_IQA_HEAD: u64 = 1;
const STREAM_VQA_HEAD: u64 = 2;
const STREAM_EMBED_HEAD: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyKind {
    Iqa,
    Vqa,
    Embed,
}

/// Every weight of a toy model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWeights {
    pub seed: u64,
    pub width: usize,
    pub stages: Vec<Conv2d>,
    pub iqa_head: Linear,
    pub vqa_head: Linear,
    pub embed_head: Linear,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ToyWeights {
    pub fn generate(seed: u64, width: usize, embed_dim: usize) -> Self {
        let width = width.max(1);
        let channels = [3, width, 2 * width, 4 * width, 4 * width];
        let mut rng = rng_for(seed, STREAM_BACKBONE);
        let stages = (0..BACKBONE_STAGES)
            .map(|i| Conv2d::random(&mut rng, channels[i], channels[i + 1], 2))
            .collect();
        let top = channels[BACKBONE_STAGES];
        Self {
            seed,
            width,
            stages,
            iqa_head: Linear::random(&mut rng_for(seed, STREAM_IQA_HEAD), top, 1),
            vqa_head: Linear::random(&mut rng_for(seed, STREAM_VQA_HEAD), top, 1),
            embed_head: Linear::random(&mut rng_for(seed, STREAM_EMBED_HEAD), top, embed_dim.max(1)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let w: Self = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if w.stages.len() != BACKBONE_STAGES {
            return Err(Error::Config(format!(
                "{}: expected {BACKBONE_STAGES} backbone stages, found {}",
                path.display(),
                w.stages.len()
            )));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Records backbone stages `1..=k` on an already-normalized input.
    fn trace_stages<'a>(&'a self, g: &mut Graph<'a>, mut x: Var, k: usize) -> Var {
        for stage in &self.stages[..k] {
            let c = g.conv(x, stage);
            x = g.tanh(c);
        }
        x
    }

    fn trace_score_head<'a>(&'a self, g: &mut Graph<'a>, top: Var, head: &'a Linear) -> Var {
        let pooled = g.global_avg_pool(top);
        let logit = g.linear(pooled, head);
        g.sigmoid(logit)
    }
}

/// Shared tap logic for the toy image and video heads.
fn trace_tap<'a>(
    weights: &'a ToyWeights,
    norm: &'a ChannelNorm,
    head: &'a Linear,
    g: &mut Graph<'a>,
    input: Var,
    k: usize,
) -> Result<Var> {
    if k == 0 || k > TOY_LAYERS {
        return Err(Error::LayerIndex {
            index: k,
            max: TOY_LAYERS,
        });
    }
    let x = g.channel_norm(input, norm);
    let stages = k.min(BACKBONE_STAGES);
    let act = weights.trace_stages(g, x, stages);
    if k == TOY_LAYERS {
        Ok(weights.trace_score_head(g, act, head))
    } else {
        Ok(act)
    }
}

fn trace_from_tap<'a>(weights: &'a ToyWeights, head: &'a Linear, g: &mut Graph<'a>, mut act: Var, k: usize) -> Result<Var> {
    if k == 0 || k > TOY_LAYERS {
        return Err(Error::LayerIndex {
            index: k,
            max: TOY_LAYERS,
        });
    }
    if k == TOY_LAYERS {
        return Ok(act);
    }
    for stage in &weights.stages[k..] {
        let c = g.conv(act, stage);
        act = g.tanh(c);
    }
    Ok(weights.trace_score_head(g, act, head))
}

/// Toy image quality metric: ImageNet normalization, four strided
/// conv+tanh stages, pooled sigmoid head.
#[derive(Debug, Clone)]
pub struct ToyIqa {
    name: String,
    weights: ToyWeights,
    norm: ChannelNorm,
}

impl ToyIqa {
    pub fn new(name: impl Into<String>, weights: ToyWeights) -> Self {
        Self {
            name: name.into(),
            weights,
            norm: ChannelNorm::imagenet(),
        }
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }
}

impl LayeredImageMetric for ToyIqa {
    fn name(&self) -> &str {
        &self.name
    }

    fn num_layers(&self) -> usize {
        TOY_LAYERS
    }

    fn min_input(&self) -> (usize, usize) {
        (TOY_MIN_INPUT, TOY_MIN_INPUT)
    }

    fn trace_tap<'a>(&'a self, graph: &mut Graph<'a>, input: Var, k: usize) -> Result<Var> {
        trace_tap(&self.weights, &self.norm, &self.weights.iqa_head, graph, input, k)
    }

    fn trace_from_tap<'a>(&'a self, graph: &mut Graph<'a>, activation: Var, k: usize) -> Result<Var> {
        trace_from_tap(&self.weights, &self.weights.iqa_head, graph, activation, k)
    }
}

/// Toy video metric: the toy image backbone with its own head, averaged
/// over frames.
#[derive(Debug, Clone)]
pub struct ToyVqa {
    name: String,
    weights: ToyWeights,
    norm: ChannelNorm,
    queries: u64,
    gradient_calls: u64,
}

impl ToyVqa {
    pub fn new(name: impl Into<String>, weights: ToyWeights) -> Self {
        Self {
            name: name.into(),
            weights,
            norm: ChannelNorm::imagenet(),
            queries: 0,
            gradient_calls: 0,
        }
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    pub fn gradient_calls(&self) -> u64 {
        self.gradient_calls
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.num_frames() < self.min_frames() {
            return Err(Error::Shape(format!(
                "{}: needs at least {} frames",
                self.name,
                self.min_frames()
            )));
        }
        check_frame_size(&self.name, &clip.frames().sub_tensor(0), (TOY_MIN_INPUT, TOY_MIN_INPUT))
    }

    /// Score of one frame under the video head.
    pub fn frame_score(&self, frame: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let input = g.input(frame);
        let out = trace_tap(&self.weights, &self.norm, &self.weights.vqa_head, &mut g, input, TOY_LAYERS)?;
        Ok(g.value(out)[0])
    }
}

impl VideoQualityMetric for ToyVqa {
    fn name(&self) -> &str {
        &self.name
    }

    fn query_count(&self) -> u64 {
        self.queries
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            gradients: true,
            taps: true,
        }
    }

    fn score_video(&mut self, clip: &VideoClip) -> Result<f64> {
        self.check_clip(clip)?;
        self.queries += 1;
        let n = clip.num_frames();
        let mut total = 0.0;
        for i in 0..n {
            total += self.frame_score(&clip.frames().sub_tensor(i))?;
        }
        Ok(total / n as f64)
    }

    fn num_taps(&self) -> usize {
        BACKBONE_STAGES
    }

    fn tap_features(&self, clip: &VideoClip, tap: usize) -> Result<Vec<f64>> {
        if tap == 0 || tap > BACKBONE_STAGES {
            return Err(Error::LayerIndex {
                index: tap,
                max: BACKBONE_STAGES,
            });
        }
        self.check_clip(clip)?;
        let n = clip.num_frames();
        let mut acc: Vec<f64> = Vec::new();
        for i in 0..n {
            let mut g = Graph::new();
            let input = g.input(&clip.frames().sub_tensor(i));
            let act = trace_tap(&self.weights, &self.norm, &self.weights.vqa_head, &mut g, input, tap)?;
            let pooled = global_pool(&Tensor::new(g.shape(act).to_vec(), g.value(act).to_vec())?);
            if acc.is_empty() {
                acc = pooled;
            } else {
                acc.iter_mut().zip(&pooled).for_each(|(a, p)| *a += p);
            }
        }
        Ok(acc.into_iter().map(|v| v / n as f64).collect())
    }

    fn score_gradient(&mut self, clip: &VideoClip) -> Result<Tensor> {
        self.check_clip(clip)?;
        self.gradient_calls += 1;
        let n = clip.num_frames();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let mut g = Graph::new();
            let input = g.input(&clip.frames().sub_tensor(i));
            let out = trace_tap(&self.weights, &self.norm, &self.weights.vqa_head, &mut g, input, TOY_LAYERS)?;
            let grad = g.backward(out, 1.0 / n as f64, input);
            grads.push(Tensor::new(clip.frames().shape()[1..].to_vec(), grad)?);
        }
        Tensor::stack(&grads)
    }
}

/// Toy frame embedder: fixed-resolution bilinear resize, CLIP-style
/// normalization, the shared backbone, pooled linear projection.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    name: String,
    weights: ToyWeights,
    norm: ChannelNorm,
    input_size: usize,
}

impl ToyEmbedder {
    pub fn new(name: impl Into<String>, weights: ToyWeights) -> Self {
        Self {
            name: name.into(),
            weights,
            norm: ChannelNorm::clip(),
            input_size: EMBED_INPUT,
        }
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }
}

impl EmbeddingModel for ToyEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed_dim(&self) -> usize {
        self.weights.embed_head.out_features
    }

    fn trace_embedding<'a>(&'a self, graph: &mut Graph<'a>, input: Var) -> Result<Var> {
        let resized = graph.resize(input, self.input_size, self.input_size);
        let x = graph.channel_norm(resized, &self.norm);
        let top = self.weights.trace_stages(graph, x, BACKBONE_STAGES);
        let pooled = graph.global_avg_pool(top);
        Ok(graph.linear(pooled, &self.weights.embed_head))
    }
}

#[derive(Debug, Clone)]
pub enum ToyAdapter {
    Iqa(ToyIqa),
    Vqa(ToyVqa),
    Embed(ToyEmbedder),
}

/// Builds a toy adapter of the given kind; identical seeds give identical
/// weights and a shared backbone across kinds.
pub fn make_toy_metric(seed: u64, kind: ToyKind, width: usize) -> ToyAdapter {
    let weights = ToyWeights::generate(seed, width, DEFAULT_EMBED_DIM);
    match kind {
        ToyKind::Iqa => ToyAdapter::Iqa(ToyIqa::new(format!("toy-iqa-{seed}"), weights)),
        ToyKind::Vqa => ToyAdapter::Vqa(ToyVqa::new(format!("toy-vqa-{seed}"), weights)),
        ToyKind::Embed => ToyAdapter::Embed(ToyEmbedder::new(format!("toy-embed-{seed}"), weights)),
    }
}

impl ToyAdapter {
    pub fn weights(&self) -> &ToyWeights {
        match self {
            ToyAdapter::Iqa(m) => &m.weights,
            ToyAdapter::Vqa(m) => &m.weights,
            ToyAdapter::Embed(m) => &m.weights,
        }
    }

    pub fn into_iqa(self) -> Option<ToyIqa> {
        match self {
            ToyAdapter::Iqa(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_vqa(self) -> Option<ToyVqa> {
        match self {
            ToyAdapter::Vqa(m) => Some(m),
            _ => None,
        }
    }

    pub fn into_embedder(self) -> Option<ToyEmbedder> {
        match self {
            ToyAdapter::Embed(m) => Some(m),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{embed_frame, features_at_layer, score_image, tap_activation};
    use crate::media::FrameTensor;
    use crate::tensor::cosine;

    fn iqa(seed: u64) -> ToyIqa {
        make_toy_metric(seed, ToyKind::Iqa, DEFAULT_WIDTH).into_iqa().unwrap()
    }

    fn frame(value: f64, h: usize, w: usize) -> FrameTensor {
        FrameTensor::new(Tensor::full(&[3, h, w], value)).unwrap()
    }

    #[test]
    fn score_is_deterministic_and_bounded() {
        let m = iqa(7);
        let f = frame(0.0, 16, 16);
        let a = score_image(&m, &f).unwrap();
        assert_eq!(a, score_image(&m, &f).unwrap());
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn final_tap_is_the_score() {
        let m = iqa(7);
        let f = frame(0.3, 16, 16);
        let tap = features_at_layer(&m, &f, TOY_LAYERS).unwrap();
        assert_eq!(tap, vec![score_image(&m, &f).unwrap()]);
    }

    #[test]
    fn composing_remaining_layers_reproduces_score() {
        let m = iqa(3);
        let f = frame(0.6, 16, 16);
        let expected = score_image(&m, &f).unwrap();
        for k in 1..=TOY_LAYERS {
            let act = tap_activation(&m, f.tensor(), k).unwrap();
            let mut g = Graph::new();
            let a = g.input(&act);
            let out = m.trace_from_tap(&mut g, a, k).unwrap();
            assert_eq!(g.value(out)[0], expected, "tap {k}");
        }
    }

    #[test]
    fn layer_index_out_of_range() {
        let m = iqa(1);
        let f = frame(0.5, 8, 8);
        assert!(matches!(features_at_layer(&m, &f, 0), Err(Error::LayerIndex { .. })));
        assert!(matches!(features_at_layer(&m, &f, TOY_LAYERS + 1), Err(Error::LayerIndex { .. })));
    }

    #[test]
    fn too_small_frame_is_a_shape_error() {
        let m = iqa(1);
        assert!(matches!(score_image(&m, &frame(0.5, 2, 8)), Err(Error::Shape(_))));
    }

    /// Stage 1 on a zero frame, evaluated with plain loops.
    #[test]
    fn first_tap_matches_hand_rolled_forward() {
        let m = iqa(7);
        let (h, w) = (8, 8);
        let got = features_at_layer(&m, &frame(0.0, h, w), 1).unwrap();

        let norm = ChannelNorm::imagenet();
        let conv = &m.weights().stages[0];
        let (oh, ow) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
        let mut expected = Vec::new();
        for co in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias[co];
                    for ci in 0..3 {
                        let v = (0.0 - norm.mean[ci]) / norm.std[ci];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (2 * oy + ky) as i64 - 1;
                                let ix = (2 * ox + kx) as i64 - 1;
                                if (0..h as i64).contains(&iy) && (0..w as i64).contains(&ix) {
                                    acc += conv.weight[((co * 3 + ci) * 3 + ky) * 3 + kx] * v;
                                }
                            }
                        }
                    }
                    expected.push(acc.tanh());
                }
            }
        }
        assert_eq!(got.len(), expected.len());
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_weights_and_shared_backbone() {
        assert_eq!(
            make_toy_metric(5, ToyKind::Iqa, 4).weights(),
            make_toy_metric(5, ToyKind::Iqa, 4).weights()
        );
        let i = make_toy_metric(5, ToyKind::Iqa, 4);
        let v = make_toy_metric(5, ToyKind::Vqa, 4);
        assert_eq!(i.weights().stages[0], v.weights().stages[0]);
        assert_ne!(i.weights().iqa_head, i.weights().vqa_head);
    }

    #[test]
    fn different_seeds_differ() {
        let f = frame(0.4, 16, 16);
        assert_ne!(score_image(&iqa(1), &f).unwrap(), score_image(&iqa(2), &f).unwrap());
    }

    #[test]
    fn vqa_on_identical_frames_equals_frame_score() {
        let mut v = make_toy_metric(7, ToyKind::Vqa, 4).into_vqa().unwrap();
        let clip = VideoClip::new(Tensor::full(&[3, 3, 16, 16], 0.25), (25, 1), "c").unwrap();
        let s = v.score_video(&clip).unwrap();
        let single = v.frame_score(&clip.frames().sub_tensor(0)).unwrap();
        assert!((s - single).abs() < 1e-15);
        for _ in 0..4 {
            v.score_video(&clip).unwrap();
        }
        assert_eq!(v.query_count(), 5);
    }

    #[test]
    fn vqa_taps_on_identical_frames_equal_single_frame() {
        let v = make_toy_metric(7, ToyKind::Vqa, 4).into_vqa().unwrap();
        let clip = VideoClip::new(Tensor::full(&[2, 3, 16, 16], 0.7), (25, 1), "c").unwrap();
        let one = VideoClip::new(Tensor::full(&[1, 3, 16, 16], 0.7), (25, 1), "c").unwrap();
        for tap in 1..=BACKBONE_STAGES {
            let a = v.tap_features(&clip, tap).unwrap();
            let b = v.tap_features(&one, tap).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
            assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedder_is_deterministic_with_unit_self_cosine() {
        let e = make_toy_metric(7, ToyKind::Embed, 4).into_embedder().unwrap();
        let f = frame(0.5, 20, 12);
        let a = embed_frame(&e, &f).unwrap();
        assert_eq!(a.len(), e.embed_dim());
        assert_eq!(a, embed_frame(&e, &f).unwrap());
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let w = ToyWeights::generate(11, 3, 8);
        w.save(&path).unwrap();
        assert_eq!(ToyWeights::load(&path).unwrap(), w);
    }
}
