//! Feature-space losses over a clip `x` and perturbation `δ`, both `N×C×H×W`:
//!
//! * cross-layer loss: mean cosine between `g_k(x_i + δ_i)` and `g_k(x_i)`;
//! * multi-metric loss: the α-weighted sum of cross-layer terms plus
//!   `(1/F) Σ |1 − α_f|`;
//! * temporal loss: mean L2 norm of consecutive perturbation differences;
//! * embedding similarity: mean cosine between frame embeddings.
//!
//! Clean-branch features are computed once and held constant: no gradient
//! flows through `g_k(x_i)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adapters::{check_frame_size, EmbeddingModel, LayeredImageMetric};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{norm2, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub use_xlayer: bool,
    pub use_embed: bool,
    pub use_temporal: bool,
    /// Tap index `k_f` per metric name.
    pub layer_per_metric: BTreeMap<String, usize>,
    /// Weight `α_f` per metric name; missing entries default to 1.
    pub metric_weights: BTreeMap<String, f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            use_xlayer: true,
            use_embed: true,
            use_temporal: true,
            layer_per_metric: BTreeMap::new(),
            metric_weights: BTreeMap::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_xlayer || self.use_embed || self.use_temporal) {
            return Err(Error::Config("at least one loss term must be enabled".into()));
        }
        if let Some((name, w)) = self.metric_weights.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("metric weight for `{name}` must be positive, got {w}")));
        }
        Ok(())
    }

    pub fn weight(&self, metric: &str) -> f64 {
        self.metric_weights.get(metric).copied().unwrap_or(1.0)
    }

    pub fn layer(&self, metric: &str) -> Result<usize> {
        self.layer_per_metric
            .get(metric)
            .copied()
            .ok_or_else(|| Error::Config(format!("no tap layer configured for metric `{metric}`")))
    }
}

fn check_pair(x: &Tensor, delta: &Tensor) -> Result<usize> {
    x.check_same_shape(delta)?;
    if x.shape().len() != 4 || x.shape()[0] == 0 {
        return Err(Error::Shape(format!("expected N×C×H×W with N≥1, got {:?}", x.shape())));
    }
    Ok(x.shape()[0])
}

/// One cross-layer term with its clean features precomputed.
pub struct CrossLayerTerm<'m> {
    metric: &'m dyn LayeredImageMetric,
    layer: usize,
    clean: Vec<Vec<f64>>,
}

impl<'m> CrossLayerTerm<'m> {
    pub fn new(metric: &'m dyn LayeredImageMetric, layer: usize, x: &Tensor) -> Result<Self> {
        if layer == 0 || layer > metric.num_layers() {
            return Err(Error::LayerIndex {
                index: layer,
                max: metric.num_layers(),
            });
        }
        if x.shape().len() != 4 {
            return Err(Error::Shape(format!("expected N×C×H×W, got {:?}", x.shape())));
        }
        let n = x.shape()[0];
        let mut clean = Vec::with_capacity(n);
        for i in 0..n {
            let frame = x.sub_tensor(i);
            check_frame_size(metric.name(), &frame, metric.min_input())?;
            let mut g = Graph::new();
            let input = g.input(&frame);
            let tap = metric.trace_tap(&mut g, input, layer)?;
            let feat = g.value(tap).to_vec();
            if norm2(&feat) == 0.0 {
                return Err(Error::DegenerateFeature { frame: i });
            }
            clean.push(feat);
        }
        Ok(Self { metric, layer, clean })
    }

    pub fn metric(&self) -> &'m dyn LayeredImageMetric {
        self.metric
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    /// Mean cosine; when `grad` is given, adds `scale · ∂loss/∂δ` into it.
    pub fn evaluate(&self, x: &Tensor, delta: &Tensor, grad: Option<(&mut Tensor, f64)>) -> Result<f64> {
        let n = check_pair(x, delta)?;
        if n != self.clean.len() {
            return Err(Error::Shape(format!(
                "clip has {n} frames, clean features cover {}",
                self.clean.len()
            )));
        }
        per_frame_cosine(n, x, delta, grad, |g, input, i| {
            let tap = self.metric.trace_tap(g, input, self.layer)?;
            Ok(g.cosine(tap, &self.clean[i]))
        })
    }
}

/// Embedding-similarity term with clean embeddings precomputed.
pub struct EmbedTerm<'m> {
    model: &'m dyn EmbeddingModel,
    clean: Vec<Vec<f64>>,
}

impl<'m> EmbedTerm<'m> {
    pub fn new(model: &'m dyn EmbeddingModel, x: &Tensor) -> Result<Self> {
        if x.shape().len() != 4 {
            return Err(Error::Shape(format!("expected N×C×H×W, got {:?}", x.shape())));
        }
        let clean = (0..x.shape()[0])
            .map(|i| {
                let mut g = Graph::new();
                let input = g.input(&x.sub_tensor(i));
                let out = model.trace_embedding(&mut g, input)?;
                let e = g.value(out).to_vec();
                if norm2(&e) == 0.0 {
                    return Err(Error::DegenerateFeature { frame: i });
                }
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Ok(Self { model, clean })
    }

    pub fn evaluate(&self, x: &Tensor, delta: &Tensor, grad: Option<(&mut Tensor, f64)>) -> Result<f64> {
        let n = check_pair(x, delta)?;
        if n != self.clean.len() {
            return Err(Error::Shape(format!(
                "clip has {n} frames, clean embeddings cover {}",
                self.clean.len()
            )));
        }
        per_frame_cosine(n, x, delta, grad, |g, input, i| {
            let out = self.model.trace_embedding(g, input)?;
            Ok(g.cosine(out, &self.clean[i]))
        })
    }
}

/// `(1/N) Σ_i cos_i` where `cos_i` is recorded by `trace` on `x_i + δ_i`.
fn per_frame_cosine<'a, F>(
    n: usize,
    x: &Tensor,
    delta: &Tensor,
    mut grad: Option<(&mut Tensor, f64)>,
    trace: F,
) -> Result<f64>
where
    F: Fn(&mut Graph<'a>, Var, usize) -> Result<Var>,
{
    let frame_shape = x.shape()[1..].to_vec();
    let mut total = 0.0;
    for i in 0..n {
        let mut g = Graph::new();
        let xi = g.input(&Tensor::new(frame_shape.clone(), x.slice(i).to_vec())?);
        let di = g.input(&Tensor::new(frame_shape.clone(), delta.slice(i).to_vec())?);
        let input = g.add(xi, di);
        let cos = trace(&mut g, input, i)?;
        total += g.value(cos)[0];
        if let Some((buf, scale)) = grad.as_mut() {
            let gi = g.backward(cos, *scale / n as f64, di);
            buf.slice_mut(i).iter_mut().zip(&gi).for_each(|(b, v)| *b += v);
        }
    }
    Ok(total / n as f64)
}

/// Cross-layer loss of tap `k` for one metric.
pub fn cross_layer_loss(m: &dyn LayeredImageMetric, k: usize, x: &Tensor, delta: &Tensor) -> Result<f64> {
    CrossLayerTerm::new(m, k, x)?.evaluate(x, delta, None)
}

pub fn cross_layer_loss_grad(
    m: &dyn LayeredImageMetric,
    k: usize,
    x: &Tensor,
    delta: &Tensor,
) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros(delta.shape());
    let v = CrossLayerTerm::new(m, k, x)?.evaluate(x, delta, Some((&mut grad, 1.0)))?;
    Ok((v, grad))
}

/// A metric with its tap index and weight `α_f`.
#[derive(Clone, Copy)]
pub struct WeightedMetric<'m> {
    pub metric: &'m dyn LayeredImageMetric,
    pub layer: usize,
    pub weight: f64,
}

fn alpha_regularizer(weights: impl ExactSizeIterator<Item = f64>) -> f64 {
    let f = weights.len() as f64;
    weights.map(|a| (1.0 - a).abs()).sum::<f64>() / f
}

fn multi_metric_impl(
    metrics: &[WeightedMetric<'_>],
    x: &Tensor,
    delta: &Tensor,
    mut grad: Option<&mut Tensor>,
) -> Result<f64> {
    if metrics.is_empty() {
        return Err(Error::Config("multi-metric loss needs at least one metric".into()));
    }
    let mut total = 0.0;
    for wm in metrics {
        let term = CrossLayerTerm::new(wm.metric, wm.layer, x)?;
        total += wm.weight * term.evaluate(x, delta, grad.as_deref_mut().map(|g| (g, wm.weight)))?;
    }
    Ok(total + alpha_regularizer(metrics.iter().map(|m| m.weight)))
}

/// `(1/N) Σ_i Σ_f α_f cos_f(i) + (1/F) Σ_f |1 − α_f|`.
pub fn multi_metric_loss(metrics: &[WeightedMetric<'_>], x: &Tensor, delta: &Tensor) -> Result<f64> {
    multi_metric_impl(metrics, x, delta, None)
}

pub fn multi_metric_loss_grad(metrics: &[WeightedMetric<'_>], x: &Tensor, delta: &Tensor) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros(delta.shape());
    let v = multi_metric_impl(metrics, x, delta, Some(&mut grad))?;
    Ok((v, grad))
}

fn temporal_impl(delta: &Tensor, grad: Option<(&mut Tensor, f64)>) -> Result<f64> {
    if delta.shape().len() != 4 {
        return Err(Error::Shape(format!("expected N×C×H×W, got {:?}", delta.shape())));
    }
    let n = delta.shape()[0];
    if n < 2 {
        log::warn!("temporal loss on a single-frame perturbation is defined as 0");
        return Ok(0.0);
    }
    let pairs = (n - 1) as f64;
    let mut total = 0.0;
    let mut diffs = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let d: Vec<f64> = delta
            .slice(i + 1)
            .iter()
            .zip(delta.slice(i))
            .map(|(b, a)| b - a)
            .collect();
        let norm = norm2(&d);
        total += norm;
        diffs.push((d, norm));
    }
    if let Some((buf, scale)) = grad {
        for (i, (d, norm)) in diffs.iter().enumerate() {
            // Non-differentiable at zero difference; use the zero subgradient.
            if *norm == 0.0 {
                continue;
            }
            let k = scale / (pairs * norm);
            buf.slice_mut(i + 1).iter_mut().zip(d).for_each(|(g, v)| *g += k * v);
            buf.slice_mut(i).iter_mut().zip(d).for_each(|(g, v)| *g -= k * v);
        }
    }
    Ok(total / pairs)
}

/// `(1/(N−1)) Σ_i ‖δ_{i+1} − δ_i‖₂`; zero for a single frame.
pub fn temporal_loss(delta: &Tensor) -> Result<f64> {
    temporal_impl(delta, None)
}

pub fn temporal_loss_grad(delta: &Tensor) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros(delta.shape());
    let v = temporal_impl(delta, Some((&mut grad, 1.0)))?;
    Ok((v, grad))
}

pub fn embed_similarity_loss(e: &dyn EmbeddingModel, x: &Tensor, delta: &Tensor) -> Result<f64> {
    EmbedTerm::new(e, x)?.evaluate(x, delta, None)
}

pub fn embed_similarity_loss_grad(e: &dyn EmbeddingModel, x: &Tensor, delta: &Tensor) -> Result<(f64, Tensor)> {
    let mut grad = Tensor::zeros(delta.shape());
    let v = EmbedTerm::new(e, x)?.evaluate(x, delta, Some((&mut grad, 1.0)))?;
    Ok((v, grad))
}

/// Per-term values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub xlayer: Option<f64>,
    pub embed: Option<f64>,
    pub temporal: Option<f64>,
    pub total: f64,
}

/// Which cross-layer terms an evaluation includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSelection {
    /// The unweighted cross-layer loss of metric `f` (one inner step of the
    /// sequential attack).
    Single(usize),
    /// The α-weighted multi-metric loss over every metric.
    All,
}

/// Loss terms prepared for one clip, with clean features cached.
pub struct LossContext<'m> {
    x: &'m Tensor,
    xlayer: Vec<(CrossLayerTerm<'m>, f64)>,
    embed: Option<EmbedTerm<'m>>,
    use_temporal: bool,
}

impl<'m> LossContext<'m> {
    pub fn new(
        cfg: &LossConfig,
        metrics: &[&'m dyn LayeredImageMetric],
        embedder: Option<&'m dyn EmbeddingModel>,
        x: &'m Tensor,
    ) -> Result<Self> {
        cfg.validate()?;
        let xlayer = if cfg.use_xlayer {
            if metrics.is_empty() {
                return Err(Error::Config("cross-layer loss enabled without metrics".into()));
            }
            metrics
                .iter()
                .map(|m| Ok((CrossLayerTerm::new(*m, cfg.layer(m.name())?, x)?, cfg.weight(m.name()))))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let embed = match (cfg.use_embed, embedder) {
            (true, Some(e)) => Some(EmbedTerm::new(e, x)?),
            (true, None) => return Err(Error::Config("embedding loss enabled without an embedder".into())),
            (false, _) => None,
        };
        Ok(Self {
            x,
            xlayer,
            embed,
            use_temporal: cfg.use_temporal,
        })
    }

    pub fn num_metrics(&self) -> usize {
        self.xlayer.len()
    }

    pub fn metric_name(&self, f: usize) -> Option<&str> {
        self.xlayer.get(f).map(|(t, _)| t.metric().name())
    }

    /// Sum of the enabled terms, and optionally its gradient w.r.t. `δ`.
    pub fn evaluate(
        &self,
        delta: &Tensor,
        selection: MetricSelection,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Tensor>)> {
        let mut grad = want_grad.then(|| Tensor::zeros(delta.shape()));
        let mut out = LossBreakdown::default();
        if !self.xlayer.is_empty() {
            let value = match selection {
                MetricSelection::Single(f) => {
                    let (term, _) = self
                        .xlayer
                        .get(f)
                        .ok_or_else(|| Error::Config(format!("metric index {f} out of range")))?;
                    term.evaluate(self.x, delta, grad.as_mut().map(|g| (g, 1.0)))?
                }
                MetricSelection::All => {
                    let mut v = 0.0;
                    for (term, w) in &self.xlayer {
                        v += w * term.evaluate(self.x, delta, grad.as_mut().map(|g| (g, *w)))?;
                    }
                    v + alpha_regularizer(self.xlayer.iter().map(|(_, w)| *w))
                }
            };
            out.xlayer = Some(value);
        }
        if let Some(e) = &self.embed {
            out.embed = Some(e.evaluate(self.x, delta, grad.as_mut().map(|g| (g, 1.0)))?);
        }
        if self.use_temporal {
            out.temporal = Some(temporal_impl(delta, grad.as_mut().map(|g| (g, 1.0)))?);
        }
        out.total = out.xlayer.unwrap_or(0.0) + out.embed.unwrap_or(0.0) + out.temporal.unwrap_or(0.0);
        Ok((out, grad))
    }
}

/// Every enabled term over all metrics.
pub fn total_loss(
    cfg: &LossConfig,
    metrics: &[&dyn LayeredImageMetric],
    embedder: Option<&dyn EmbeddingModel>,
    x: &Tensor,
    delta: &Tensor,
) -> Result<LossBreakdown> {
    Ok(LossContext::new(cfg, metrics, embedder, x)?
        .evaluate(delta, MetricSelection::All, false)?
        .0)
}
