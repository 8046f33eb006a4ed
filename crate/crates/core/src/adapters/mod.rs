//! Adapter roles: white-box layered image metrics with feature taps,
//! black-box video metrics, and frame embedders.
//!
//! Differentiable adapters record their forward pass on a [`Graph`] so the
//! losses can pull gradients back to the input frame.

mod registry;
pub mod toy;

pub use registry::{AdapterKind, AdapterSpec, Registry};
pub use toy::{make_toy_metric, ToyAdapter, ToyEmbedder, ToyIqa, ToyKind, ToyVqa, ToyWeights};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::media::{FrameTensor, VideoClip};
use crate::tensor::Tensor;

/// A quality metric `g = h_K ∘ … ∘ h_1` with a feature tap after each layer.
/// Tap `K` is the normalized score in `[0, 1]`.
pub trait LayeredImageMetric: Send + Sync {
    fn name(&self) -> &str;

    /// Number of tap points `K`.
    fn num_layers(&self) -> usize;

    /// Smallest accepted `(height, width)`.
    fn min_input(&self) -> (usize, usize);

    fn differentiable(&self) -> bool {
        true
    }

    /// Records the composition of the first `k` layers applied to `input`
    /// (a `C×H×W` node). The returned node keeps its un-flattened shape.
    fn trace_tap<'a>(&'a self, graph: &mut Graph<'a>, input: Var, k: usize) -> Result<Var>;

    /// Records layers `k+1..=K` applied to the tap-`k` activation.
    fn trace_from_tap<'a>(&'a self, graph: &mut Graph<'a>, activation: Var, k: usize) -> Result<Var>;
}

/// Capability flags advertised by a video metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub gradients: bool,
    pub taps: bool,
}

/// A video metric `f` queried as a black box. Every `score_video` call
/// counts as one query.
pub trait VideoQualityMetric: Send {
    fn name(&self) -> &str;

    fn query_count(&self) -> u64;

    fn min_frames(&self) -> usize {
        1
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn score_video(&mut self, clip: &VideoClip) -> Result<f64>;

    fn num_taps(&self) -> usize {
        0
    }

    /// Per-frame activations at `tap`, spatially average-pooled, then
    /// averaged over frames.
    fn tap_features(&self, _clip: &VideoClip, _tap: usize) -> Result<Vec<f64>> {
        Err(Error::Unsupported(format!("{} exposes no feature taps", self.name())))
    }

    /// Gradient of the score with respect to the frames. White-box use only;
    /// black-box attacks never call this.
    fn score_gradient(&mut self, _clip: &VideoClip) -> Result<Tensor> {
        Err(Error::Capability {
            adapter: self.name().to_string(),
            capability: "gradients".into(),
        })
    }
}

/// A frame embedder such as an image-text model's image tower.
pub trait EmbeddingModel: Send + Sync {
    fn name(&self) -> &str;
    fn embed_dim(&self) -> usize;

    fn differentiable(&self) -> bool {
        true
    }

    fn trace_embedding<'a>(&'a self, graph: &mut Graph<'a>, input: Var) -> Result<Var>;
}

pub(crate) fn check_frame_size(name: &str, frame: &Tensor, min: (usize, usize)) -> Result<()> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("{name}: expected 3×H×W frame, got {s:?}")));
    }
    if s[1] < min.0 || s[2] < min.1 {
        return Err(Error::Shape(format!(
            "{name}: frame {}×{} is below the minimum input {}×{}",
            s[1], s[2], min.0, min.1
        )));
    }
    Ok(())
}

fn check_layer(m: &dyn LayeredImageMetric, k: usize) -> Result<()> {
    if k == 0 || k > m.num_layers() {
        return Err(Error::LayerIndex {
            index: k,
            max: m.num_layers(),
        });
    }
    Ok(())
}

/// Unit-interval score of a single frame.
pub fn score_image(m: &dyn LayeredImageMetric, frame: &FrameTensor) -> Result<f64> {
    let k = m.num_layers();
    Ok(features_at_layer(m, frame, k)?[0])
}

/// Flattened activation `g_k(frame)`.
pub fn features_at_layer(m: &dyn LayeredImageMetric, frame: &FrameTensor, k: usize) -> Result<Vec<f64>> {
    tap_activation(m, frame.tensor(), k).map(|t| t.into_data())
}

/// Activation at tap `k` with its shape, on an unchecked-range frame.
pub fn tap_activation(m: &dyn LayeredImageMetric, frame: &Tensor, k: usize) -> Result<Tensor> {
    check_layer(m, k)?;
    check_frame_size(m.name(), frame, m.min_input())?;
    let mut g = Graph::new();
    let input = g.input(frame);
    let tap = m.trace_tap(&mut g, input, k)?;
    Tensor::new(g.shape(tap).to_vec(), g.value(tap).to_vec())
}

/// Tap-`k` activation with spatial dimensions average-pooled away.
pub fn pooled_features(m: &dyn LayeredImageMetric, frame: &Tensor, k: usize) -> Result<Vec<f64>> {
    Ok(global_pool(&tap_activation(m, frame, k)?))
}

/// Averages a `C×H×W` activation over space; 1-D activations pass through.
pub fn global_pool(t: &Tensor) -> Vec<f64> {
    match t.shape() {
        [_, h, w] => {
            let plane = h * w;
            t.data()
                .chunks(plane)
                .map(|c| c.iter().sum::<f64>() / plane as f64)
                .collect()
        }
        _ => t.data().to_vec(),
    }
}

pub fn embed_frame(e: &dyn EmbeddingModel, frame: &FrameTensor) -> Result<Vec<f64>> {
    embed_tensor(e, frame.tensor())
}

pub fn embed_tensor(e: &dyn EmbeddingModel, frame: &Tensor) -> Result<Vec<f64>> {
    check_frame_size(e.name(), frame, (1, 1))?;
    let mut g = Graph::new();
    let input = g.input(frame);
    let out = e.trace_embedding(&mut g, input)?;
    Ok(g.value(out).to_vec())
}
