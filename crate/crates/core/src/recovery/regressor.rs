//! Three-layer time-conditioned convolutional regressor.
//!
//! Real and imaginary parts enter as two planes. Layers are 3x3 zero-padded
//! convolutions `2 -> 16 -> 16 -> 2` with leaky-ReLU (slope 0.1) between
//! them. The step index is embedded sinusoidally (8 dims, wavelengths
//! geometric in `[1, 2 T_f]`) and projected to a per-channel bias added
//! after the first layer. With [`Architecture::Residual`] the network output
//! is added to its input.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, FdbError, Result};
use crate::grid::ComplexImage;
use crate::rng;

use super::RecoveryOperator;

pub const IN_CHANNELS: usize = 2;
pub const HIDDEN: usize = 16;
pub const OUT_CHANNELS: usize = 2;
pub const KERNEL: usize = 3;
pub const EMBED_DIM: usize = 8;
pub const LEAK: f64 = 0.1;
const RESIDUAL_HEAD_SCALE: f64 = 0.01;

const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Plain,
    /// Predicts a correction added to the input image.
    #[default]
    Residual,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Plain => "conv3-2x16x16x2-plain",
            Architecture::Residual => "conv3-2x16x16x2-residual",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Architecture::Plain, Architecture::Residual]
            .into_iter()
            .find(|a| a.name() == name)
    }
}

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    wt: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

const LAYOUT: Layout = {
    let w1 = 0;
    let b1 = w1 + HIDDEN * IN_CHANNELS * TAPS;
    let wt = b1 + HIDDEN;
    let w2 = wt + HIDDEN * EMBED_DIM;
    let b2 = w2 + HIDDEN * HIDDEN * TAPS;
    let w3 = b2 + HIDDEN;
    let b3 = w3 + OUT_CHANNELS * HIDDEN * TAPS;
    let len = b3 + OUT_CHANNELS;
    Layout {
        w1,
        b1,
        wt,
        w2,
        b2,
        w3,
        b3,
        len,
    }
};

pub const PARAM_COUNT: usize = LAYOUT.len;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyRegressor {
    architecture: Architecture,
    t_f: usize,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
struct Tape {
    h: usize,
    w: usize,
    input: Vec<f64>,
    embed: [f64; EMBED_DIM],
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

impl TinyRegressor {
    /// Glorot-uniform weights, zero biases. The residual head is scaled down.
    pub fn new(architecture: Architecture, t_f: usize, seed: u64) -> Result<Self> {
        if t_f == 0 {
            return Err(FdbError::config("T_f must be at least 1"));
        }
        let mut rng = rng::stream(rng::derive_seed(seed, rng::tags::INIT, 0), 0);
        let mut params = vec![0.0; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        let l = LAYOUT;
        fill(l.w1..l.b1, IN_CHANNELS * TAPS, HIDDEN * TAPS);
        fill(l.wt..l.w2, EMBED_DIM, HIDDEN);
        fill(l.w2..l.b2, HIDDEN * TAPS, HIDDEN * TAPS);
        fill(l.w3..l.b3, HIDDEN * TAPS, OUT_CHANNELS * TAPS);
        if architecture == Architecture::Residual {
            // Start close to the identity map.
            params[l.w3..l.b3].iter_mut().for_each(|p| *p *= RESIDUAL_HEAD_SCALE);
        }
        Ok(Self {
            architecture,
            t_f,
            params,
        })
    }

    pub fn from_params(architecture: Architecture, t_f: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(FdbError::Format(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        if t_f == 0 {
            return Err(FdbError::config("T_f must be at least 1"));
        }
        Ok(Self {
            architecture,
            t_f,
            params,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn t_f(&self) -> usize {
        self.t_f
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sinusoidal embedding of `min(t, T_f)` with wavelengths
    /// `(2 T_f)^(m / 3)`, `m = 0..4`. Steps past `T_f` reuse the embedding of
    /// `T_f`, so extended reconstruction trajectories stay in distribution.
    pub fn time_embedding(&self, t: usize) -> [f64; EMBED_DIM] {
        let t = t.min(self.t_f);
        let span = (2 * self.t_f) as f64;
        let half = EMBED_DIM / 2;
        let mut e = [0.0; EMBED_DIM];
        for m in 0..half {
            let wavelength = span.powf(m as f64 / (half - 1) as f64);
            let angle = t as f64 / wavelength;
            e[2 * m] = angle.sin();
            e[2 * m + 1] = angle.cos();
        }
        e
    }

    pub fn forward(&self, x: &ComplexImage, t: usize) -> ComplexImage {
        let tape = self.run(x, t);
        planes_to_image(&tape.out, tape.h, tape.w)
    }

    fn run(&self, x: &ComplexImage, t: usize) -> Tape {
        let (h, w) = x.shape();
        let n = h * w;
        let p = &self.params;
        let l = LAYOUT;
        let input = image_to_planes(x);
        let embed = self.time_embedding(t);

        let mut z1 = vec![0.0; HIDDEN * n];
        for o in 0..HIDDEN {
            let tb: f64 = (0..EMBED_DIM).map(|e| p[l.wt + o * EMBED_DIM + e] * embed[e]).sum();
            z1[o * n..(o + 1) * n].fill(p[l.b1 + o] + tb);
        }
        conv_forward(&input, IN_CHANNELS, h, w, &p[l.w1..l.b1], HIDDEN, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&v| leaky(v)).collect();

        let mut z2 = vec![0.0; HIDDEN * n];
        for o in 0..HIDDEN {
            z2[o * n..(o + 1) * n].fill(p[l.b2 + o]);
        }
        conv_forward(&a1, HIDDEN, h, w, &p[l.w2..l.b2], HIDDEN, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&v| leaky(v)).collect();

        let mut out = vec![0.0; OUT_CHANNELS * n];
        for o in 0..OUT_CHANNELS {
            out[o * n..(o + 1) * n].fill(p[l.b3 + o]);
        }
        conv_forward(&a2, HIDDEN, h, w, &p[l.w3..l.b3], OUT_CHANNELS, &mut out);
        if self.architecture == Architecture::Residual {
            for (o, i) in out.iter_mut().zip(&input) {
                *o += i;
            }
        }
        Tape {
            h,
            w,
            input,
            embed,
            z1,
            a1,
            z2,
            a2,
            out,
        }
    }

    /// Parameter gradient given the gradient of a loss w.r.t. the output image
    /// (real/imag planes, same layout as the output).
    fn backward(&self, tape: &Tape, grad_out: &[f64]) -> Vec<f64> {
        let (h, w) = (tape.h, tape.w);
        let n = h * w;
        let p = &self.params;
        let l = LAYOUT;
        let mut g = vec![0.0; PARAM_COUNT];

        for o in 0..OUT_CHANNELS {
            g[l.b3 + o] = grad_out[o * n..(o + 1) * n].iter().sum();
        }
        let mut d_a2 = vec![0.0; HIDDEN * n];
        conv_backward(&tape.a2, HIDDEN, h, w, grad_out, OUT_CHANNELS, &p[l.w3..l.b3], &mut g[l.w3..l.b3], Some(&mut d_a2));
        let d_z2: Vec<f64> = d_a2.iter().zip(&tape.z2).map(|(&d, &z)| d * leaky_grad(z)).collect();

        for o in 0..HIDDEN {
            g[l.b2 + o] = d_z2[o * n..(o + 1) * n].iter().sum();
        }
        let mut d_a1 = vec![0.0; HIDDEN * n];
        conv_backward(&tape.a1, HIDDEN, h, w, &d_z2, HIDDEN, &p[l.w2..l.b2], &mut g[l.w2..l.b2], Some(&mut d_a1));
        let d_z1: Vec<f64> = d_a1.iter().zip(&tape.z1).map(|(&d, &z)| d * leaky_grad(z)).collect();

        for o in 0..HIDDEN {
            let s: f64 = d_z1[o * n..(o + 1) * n].iter().sum();
            g[l.b1 + o] = s;
            for e in 0..EMBED_DIM {
                g[l.wt + o * EMBED_DIM + e] = s * tape.embed[e];
            }
        }
        conv_backward(&tape.input, IN_CHANNELS, h, w, &d_z1, HIDDEN, &p[l.w1..l.b1], &mut g[l.w1..l.b1], None);
        g
    }

    /// Loss and parameter gradient for one sample.
    ///
    /// `weight_mask`, when given, restricts the loss to the kept k-space
    /// components: `||C_t (G(x_t) - x_0)||^2`; otherwise the loss is
    /// `||G(x_t) - x_0||^2`. Both are multiplied by `loss_scale`.
    pub fn loss_and_gradient(
        &self,
        x_t: &ComplexImage,
        t: usize,
        x0: &ComplexImage,
        weight_mask: Option<&crate::grid::FrequencyMask>,
        loss_scale: f64,
    ) -> Result<(f64, Vec<f64>)> {
        check_shape(x0.shape(), x_t.shape())?;
        let tape = self.run(x_t, t);
        let pred = planes_to_image(&tape.out, tape.h, tape.w);
        let mut residual = (&pred - x0)?;
        if let Some(mask) = weight_mask {
            residual = super::project(&residual, mask)?;
        }
        let loss = loss_scale * residual.norm_sqr();
        let grad_img = residual.scale(2.0 * loss_scale);
        let grad = self.backward(&tape, &image_to_planes(&grad_img));
        Ok((loss, grad))
    }
}

impl RecoveryOperator for TinyRegressor {
    fn recover(&self, x_t: &ComplexImage, t: usize) -> Result<ComplexImage> {
        Ok(self.forward(x_t, t))
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAK * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAK
    }
}

fn image_to_planes(x: &ComplexImage) -> Vec<f64> {
    let n = x.len();
    let mut planes = vec![0.0; 2 * n];
    for (k, c) in x.data().iter().enumerate() {
        planes[k] = c.re;
        planes[n + k] = c.im;
    }
    planes
}

fn planes_to_image(planes: &[f64], h: usize, w: usize) -> ComplexImage {
    let n = h * w;
    let data = (0..n).map(|k| Complex64::new(planes[k], planes[n + k])).collect();
    ComplexImage::from_vec(h, w, data).expect("plane layout matches shape")
}

/// Valid index range of `j + d - 1` inside `0..len` for tap offset `d`.
fn tap_range(d: usize, len: usize) -> (usize, usize) {
    // Output index j reads input j + d - 1.
    let lo = if d == 0 { 1 } else { 0 };
    let hi = if d == 2 { len - 1 } else { len };
    (lo, hi.max(lo))
}

/// Accumulates a zero-padded 3x3 convolution of `input` into `out`.
fn conv_forward(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], cout: usize, out: &mut [f64]) {
    let n = h * w;
    for o in 0..cout {
        let out_plane = &mut out[o * n..(o + 1) * n];
        for c in 0..cin {
            let in_plane = &input[c * n..(c + 1) * n];
            for di in 0..KERNEL {
                let (ilo, ihi) = tap_range(di, h);
                for dj in 0..KERNEL {
                    let wv = weight[((o * cin + c) * KERNEL + di) * KERNEL + dj];
                    let (jlo, jhi) = tap_range(dj, w);
                    for i in ilo..ihi {
                        let src_row = (i + di - 1) * w;
                        let dst = &mut out_plane[i * w + jlo..i * w + jhi];
                        let src = &in_plane[src_row + jlo + dj - 1..src_row + jhi + dj - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    grad_out: &[f64],
    cout: usize,
    weight: &[f64],
    grad_w: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = h * w;
    for o in 0..cout {
        let g_plane = &grad_out[o * n..(o + 1) * n];
        for c in 0..cin {
            let in_plane = &input[c * n..(c + 1) * n];
            for di in 0..KERNEL {
                let (ilo, ihi) = tap_range(di, h);
                for dj in 0..KERNEL {
                    let widx = ((o * cin + c) * KERNEL + di) * KERNEL + dj;
                    let (jlo, jhi) = tap_range(dj, w);
                    let mut acc = 0.0;
                    for i in ilo..ihi {
                        let src_row = (i + di - 1) * w;
                        let g = &g_plane[i * w + jlo..i * w + jhi];
                        let s = &in_plane[src_row + jlo + dj - 1..src_row + jhi + dj - 1];
                        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_w[widx] += acc;
                    if let Some(gin) = grad_in.as_deref_mut() {
                        let wv = weight[widx];
                        let gin_plane = &mut gin[c * n..(c + 1) * n];
                        for i in ilo..ihi {
                            let src_row = (i + di - 1) * w;
                            let g = &g_plane[i * w + jlo..i * w + jhi];
                            let d = &mut gin_plane[src_row + jlo + dj - 1..src_row + jhi + dj - 1];
                            for (dv, gv) in d.iter_mut().zip(g) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Central-difference check of [`TinyRegressor::loss_and_gradient`] on
/// `count` randomly chosen parameters; returns the largest relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    model: &TinyRegressor,
    x_t: &ComplexImage,
    t: usize,
    x0: &ComplexImage,
    count: usize,
    seed: u64,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_gradient(x_t, t, x0, None, 1.0)?;
    let mut rng = rng::stream(seed, 0);
    let picks = rand::seq::index::sample(&mut rng, PARAM_COUNT, count.min(PARAM_COUNT));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for idx in picks {
        let orig = probe.params[idx];
        probe.params[idx] = orig + STEP;
        let (lp, _) = probe.loss_and_gradient(x_t, t, x0, None, 1.0)?;
        probe.params[idx] = orig - STEP;
        let (lm, _) = probe.loss_and_gradient(x_t, t, x0, None, 1.0)?;
        probe.params[idx] = orig;
        let numeric = (lp - lm) / (2.0 * STEP);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
