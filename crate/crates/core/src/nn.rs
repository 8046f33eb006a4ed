//! Fixed-weight layer parameters used by the toy adapters.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// 3×3 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out][in][3][3]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub const KERNEL: usize = 3;
const PAD: usize = 1;

impl Conv2d {
    pub fn random(rng: &mut impl Rng, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let fan_in = (in_channels * KERNEL * KERNEL) as f64;
        let bound = (3.0 / fan_in).sqrt() * 1.5;
        let weight = (0..out_channels * in_channels * KERNEL * KERNEL)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out_channels).map(|_| rng.gen_range(-0.1..0.1)).collect();
        Self {
            in_channels,
            out_channels,
            stride,
            weight,
            bias,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * PAD - KERNEL) / self.stride + 1,
            (w + 2 * PAD - KERNEL) / self.stride + 1,
        )
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.output_size(h, w);
        let mut out = vec![0.0; self.out_channels * oh * ow];
        for co in 0..self.out_channels {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            plane.fill(self.bias[co]);
            for ci in 0..self.in_channels {
                let src = &input[ci * h * w..(ci + 1) * h * w];
                let k = &self.weight[(co * self.in_channels + ci) * 9..][..9];
                for oy in 0..oh {
                    for ky in 0..KERNEL {
                        let iy = (oy * self.stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for kx in 0..KERNEL {
                                let ix = (ox * self.stride + kx) as isize - PAD as isize;
                                if ix >= 0 && ix < w as isize {
                                    acc += k[ky * KERNEL + kx] * row[ix as usize];
                                }
                            }
                            plane[oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Conv2d::forward`] with respect to its input.
    pub fn backward_input(&self, grad_out: &[f64], h: usize, w: usize, grad_in: &mut [f64]) {
        let (oh, ow) = self.output_size(h, w);
        for co in 0..self.out_channels {
            let g = &grad_out[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..self.in_channels {
                let dst = &mut grad_in[ci * h * w..(ci + 1) * h * w];
                let k = &self.weight[(co * self.in_channels + ci) * 9..][..9];
                for oy in 0..oh {
                    for ky in 0..KERNEL {
                        let iy = (oy * self.stride + ky) as isize - PAD as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let go = g[oy * ow + ox];
                            for kx in 0..KERNEL {
                                let ix = (ox * self.stride + kx) as isize - PAD as isize;
                                if ix >= 0 && ix < w as isize {
                                    row[ix as usize] += k[ky * KERNEL + kx] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dense layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn random(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Self {
        let bound = (3.0 / in_features as f64).sqrt() * 1.5;
        Self {
            in_features,
            out_features,
            weight: (0..in_features * out_features)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
            bias: (0..out_features).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_features)
            .map(|o| {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                self.bias[o] + crate::tensor::dot(row, x)
            })
            .collect()
    }

    pub fn backward_input(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
            for (gi, &wv) in grad_in.iter_mut().zip(row) {
                *gi += wv * g;
            }
        }
    }
}

/// Per-channel `(x - mean) / std` normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelNorm {
    pub fn imagenet() -> Self {
        Self {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    pub fn clip() -> Self {
        Self {
            mean: vec![0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: vec![0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

/// One output coordinate of a bilinear resize: two source indices and weights.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Half-pixel-centre bilinear sampling positions for resizing `src` samples to `dst`.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<BilinearTap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let w_hi = pos - lo as f64;
            BilinearTap {
                lo,
                hi,
                w_lo: 1.0 - w_hi,
                w_hi,
            }
        })
        .collect()
}

/// Bilinear resize of a `C×H×W` buffer to `C×oh×ow`.
pub fn resize_bilinear(input: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let top = x.w_lo * src[y.lo * w + x.lo] + x.w_hi * src[y.lo * w + x.hi];
                let bot = x.w_lo * src[y.hi * w + x.lo] + x.w_hi * src[y.hi * w + x.hi];
                out[ch * oh * ow + oy * ow + ox] = y.w_lo * top + y.w_hi * bot;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward(
    grad_out: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_in: &mut [f64],
) {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    for ch in 0..c {
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            for (ox, x) in tx.iter().enumerate() {
                let g = grad_out[ch * oh * ow + oy * ow + ox];
                dst[y.lo * w + x.lo] += y.w_lo * x.w_lo * g;
                dst[y.lo * w + x.hi] += y.w_lo * x.w_hi * g;
                dst[y.hi * w + x.lo] += y.w_hi * x.w_lo * g;
                dst[y.hi * w + x.hi] += y.w_hi * x.w_hi * g;
            }
        }
    }
}
