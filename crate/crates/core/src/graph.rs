//! Minimal reverse-mode differentiation over the handful of operations the
//! adapters need. Parameters are borrowed constants; only inputs receive
//! gradients.

use crate::nn::{self, ChannelNorm, Conv2d, Linear};
use crate::tensor::{dot, norm2, Tensor, COSINE_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Input,
    Add(Var, Var),
    Norm(Var, &'a ChannelNorm),
    Conv(Var, &'a Conv2d),
    Tanh(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Linear(Var, &'a Linear),
    Resize(Var),
    Cosine(Var, &'a [f64]),
}

struct Node<'a> {
    op: Op<'a>,
    shape: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<'a>, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(Op::Input, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Add(a, b), shape, value)
    }

    pub fn channel_norm(&mut self, a: Var, norm: &'a ChannelNorm) -> Var {
        let shape = self.shape(a).to_vec();
        let plane = shape[1] * shape[2];
        let value = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane;
                (v - norm.mean[c]) / norm.std[c]
            })
            .collect();
        self.push(Op::Norm(a, norm), shape, value)
    }

    pub fn conv(&mut self, a: Var, conv: &'a Conv2d) -> Var {
        let s = self.shape(a);
        let (h, w) = (s[1], s[2]);
        let (oh, ow) = conv.output_size(h, w);
        let value = conv.forward(self.value(a), h, w);
        self.push(Op::Conv(a, conv), vec![conv.out_channels, oh, ow], value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, value)
    }

    /// `C×H×W → C`
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let (c, plane) = (s[0], s[1] * s[2]);
        let value = self
            .value(a)
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        self.push(Op::GlobalAvgPool(a), vec![c], value)
    }

    pub fn linear(&mut self, a: Var, lin: &'a Linear) -> Var {
        let value = lin.forward(self.value(a));
        self.push(Op::Linear(a, lin), vec![lin.out_features], value)
    }

    pub fn resize(&mut self, a: Var, oh: usize, ow: usize) -> Var {
        let s = self.shape(a);
        let (c, h, w) = (s[0], s[1], s[2]);
        let value = nn::resize_bilinear(self.value(a), c, h, w, oh, ow);
        self.push(Op::Resize(a), vec![c, oh, ow], value)
    }

    /// Cosine similarity between the flattened `a` and a constant vector.
    pub fn cosine(&mut self, a: Var, target: &'a [f64]) -> Var {
        let value = vec![dot(self.value(a), target) / (norm2(self.value(a)) * norm2(target) + COSINE_EPS)];
        self.push(Op::Cosine(a, target), vec![1], value)
    }

    /// Gradient of the scalar `output` with respect to `wrt` (an input node),
    /// with `output` seeded by `seed`.
    pub fn backward(&self, output: Var, seed: f64, wrt: Var) -> Vec<f64> {
        assert_eq!(self.nodes[output.0].value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![seed]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if idx == wrt.0 {
                return g;
            }
            let node = &self.nodes[idx];
            match node.op {
                Op::Input => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &g);
                    accumulate(&mut grads, b, &g);
                }
                Op::Norm(a, norm) => {
                    let plane = node.shape[1] * node.shape[2];
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v / norm.std[i / plane])
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Conv(a, conv) => {
                    let s = &self.nodes[a.0].shape;
                    let mut ga = vec![0.0; s.iter().product()];
                    conv.backward_input(&g, s[1], s[2], &mut ga);
                    accumulate(&mut grads, a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gv, y)| gv * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::GlobalAvgPool(a) => {
                    let s = &self.nodes[a.0].shape;
                    let plane = s[1] * s[2];
                    let ga: Vec<f64> = (0..s[0] * plane)
                        .map(|i| g[i / plane] / plane as f64)
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Linear(a, lin) => {
                    let mut ga = vec![0.0; lin.in_features];
                    lin.backward_input(&g, &mut ga);
                    accumulate(&mut grads, a, &ga);
                }
                Op::Resize(a) => {
                    let s = &self.nodes[a.0].shape;
                    let mut ga = vec![0.0; s.iter().product()];
                    nn::resize_bilinear_backward(
                        &g,
                        s[0],
                        s[1],
                        s[2],
                        node.shape[1],
                        node.shape[2],
                        &mut ga,
                    );
                    accumulate(&mut grads, a, &ga);
                }
                Op::Cosine(a, target) => {
                    let x = &self.nodes[a.0].value;
                    let nx = norm2(x);
                    let nt = norm2(target);
                    let d = dot(x, target);
                    let denom = nx * nt + COSINE_EPS;
                    // d/dx [x·t / (|x||t| + eps)]
                    let coef_t = g[0] / denom;
                    let coef_x = if nx > 0.0 {
                        -g[0] * d * nt / (nx * denom * denom)
                    } else {
                        0.0
                    };
                    let ga: Vec<f64> = x
                        .iter()
                        .zip(target)
                        .map(|(xv, tv)| coef_t * tv + coef_x * xv)
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
            }
        }
        vec![0.0; self.nodes[wrt.0].value.len()]
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
