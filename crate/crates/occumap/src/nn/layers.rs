//! Network layers with explicit forward caches and hand-derived backward
//! passes. All reductions run in a fixed order (ascending batch index, then
//! channel, then spatial), so results are bit-identical run to run even with
//! the batch-parallel paths enabled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::tensor::{Scalar, Tensor4};

/// Range of loop coordinate `v` with `v*s + k_off - p` landing in
/// `[0, produced)`, clamped to `[0, bound)`.
#[inline]
fn loop_range(k_off: usize, s: usize, p: usize, produced: usize, bound: usize) -> std::ops::Range<usize> {
    let k = k_off as isize;
    let p = p as isize;
    let s = s as isize;
    let lo = (p - k + s - 1).div_euclid(s).max(0);
    let hi = (produced as isize - 1 + p - k).div_euclid(s) + 1;
    let hi = hi.clamp(0, bound as isize);
    let lo = lo.min(hi);
    lo as usize..hi as usize
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2-D convolution, square kernel, no bias (a batchnorm precedes every
/// convolution, so biases would be redundant and are not part of the
/// parameter count). Weight layout: `[out_ch][in_ch][k][k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub grad_weight: Vec<T>,
    cache_input: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = out_ch * in_ch * k * k;
        let bound = (6.0 / (in_ch * k * k) as f64).sqrt();
        let weight = (0..n).map(|_| T::of_f64(rng.random_range(-bound..bound))).collect();
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight,
            grad_weight: vec![T::zero(); n],
            cache_input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn num_params(&self) -> usize {
        self.weight.len()
    }

    #[inline]
    fn w_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&mut self, x: &Tensor4<T>, keep_cache: bool) -> Tensor4<T> {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor4::zeros(x.n, self.out_ch, oh, ow);
        let (s, p, k) = (self.stride, self.pad, self.k);
        let plane_out = oh * ow;
        let chunk = self.out_ch * plane_out;
        out.data.par_chunks_mut(chunk).enumerate().for_each(|(b, ob)| {
            for o in 0..self.out_ch {
                let out_plane = &mut ob[o * plane_out..(o + 1) * plane_out];
                for i in 0..self.in_ch {
                    let x_plane = x.plane(b, i);
                    for ky in 0..k {
                        let oy_range = loop_range(ky, s, p, x.h, oh);
                        for kx in 0..k {
                            let wv = self.w_at(o, i, ky, kx);
                            let ox_range = loop_range(kx, s, p, x.w, ow);
                            for oy in oy_range.clone() {
                                let iy = oy * s + ky - p;
                                let xrow = &x_plane[iy * x.w..(iy + 1) * x.w];
                                let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                                for ox in ox_range.clone() {
                                    let ix = ox * s + kx - p;
                                    orow[ox] = orow[ox] + wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
        if keep_cache {
            self.cache_input = Some(x.clone());
        }
        out
    }

    /// Accumulates weight gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .cache_input
            .take()
            .ok_or_else(|| Error::State("conv backward before forward".into()))?;
        let (s, p, k) = (self.stride, self.pad, self.k);
        let (oh, ow) = (gy.h, gy.w);

        // Weight gradient, parallel over output channels; batch loop inside
        // keeps the accumulation order fixed.
        let gw_stride = self.in_ch * k * k;
        self.grad_weight
            .par_chunks_mut(gw_stride)
            .enumerate()
            .for_each(|(o, gw_o)| {
                for b in 0..x.n {
                    let gy_plane = gy.plane(b, o);
                    for i in 0..self.in_ch {
                        let x_plane = x.plane(b, i);
                        for ky in 0..k {
                            let oy_range = loop_range(ky, s, p, x.h, oh);
                            for kx in 0..k {
                                let ox_range = loop_range(kx, s, p, x.w, ow);
                                let mut acc = T::zero();
                                for oy in oy_range.clone() {
                                    let iy = oy * s + ky - p;
                                    let xrow = &x_plane[iy * x.w..(iy + 1) * x.w];
                                    let grow = &gy_plane[oy * ow..(oy + 1) * ow];
                                    for ox in ox_range.clone() {
                                        let ix = ox * s + kx - p;
                                        acc = acc + grow[ox] * xrow[ix];
                                    }
                                }
                                let wi = (i * k + ky) * k + kx;
                                gw_o[wi] = gw_o[wi] + acc;
                            }
                        }
                    }
                }
            });

        // Input gradient, parallel over batch.
        let mut gx = Tensor4::zeros(x.n, self.in_ch, x.h, x.w);
        let chunk = self.in_ch * x.h * x.w;
        let plane_in = x.h * x.w;
        gx.data.par_chunks_mut(chunk).enumerate().for_each(|(b, gxb)| {
            for i in 0..self.in_ch {
                let gx_plane = &mut gxb[i * plane_in..(i + 1) * plane_in];
                for o in 0..self.out_ch {
                    let gy_plane = gy.plane(b, o);
                    for ky in 0..k {
                        let oy_range = loop_range(ky, s, p, x.h, oh);
                        for kx in 0..k {
                            let wv = self.w_at(o, i, ky, kx);
                            let ox_range = loop_range(kx, s, p, x.w, ow);
                            for oy in oy_range.clone() {
                                let iy = oy * s + ky - p;
                                let grow = &gy_plane[oy * ow..(oy + 1) * ow];
                                let xrow = &mut gx_plane[iy * x.w..(iy + 1) * x.w];
                                for ox in ox_range.clone() {
                                    let ix = ox * s + kx - p;
                                    xrow[ix] = xrow[ix] + wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

/// 2-D transposed convolution, no bias. Weight layout: `[in_ch][out_ch][k][k]`.
/// Output size: `(in - 1) * stride - 2 * pad + k + output_pad`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub weight: Vec<T>,
    pub grad_weight: Vec<T>,
    cache_input: Option<Tensor4<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = in_ch * out_ch * k * k;
        let bound = (6.0 / (in_ch * k * k) as f64).sqrt();
        let weight = (0..n).map(|_| T::of_f64(rng.random_range(-bound..bound))).collect();
        ConvTranspose2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            output_pad,
            weight,
            grad_weight: vec![T::zero(); n],
            cache_input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k + self.output_pad - 2 * self.pad,
            (w - 1) * self.stride + self.k + self.output_pad - 2 * self.pad,
        )
    }

    pub fn num_params(&self) -> usize {
        self.weight.len()
    }

    #[inline]
    fn w_at(&self, i: usize, o: usize, ky: usize, kx: usize) -> T {
        self.weight[((i * self.out_ch + o) * self.k + ky) * self.k + kx]
    }

    pub fn forward(&mut self, x: &Tensor4<T>, keep_cache: bool) -> Tensor4<T> {
        assert_eq!(x.c, self.in_ch, "conv-transpose input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor4::zeros(x.n, self.out_ch, oh, ow);
        let (s, p, k) = (self.stride, self.pad, self.k);
        let plane_out = oh * ow;
        let chunk = self.out_ch * plane_out;
        out.data.par_chunks_mut(chunk).enumerate().for_each(|(b, ob)| {
            for o in 0..self.out_ch {
                let out_plane = &mut ob[o * plane_out..(o + 1) * plane_out];
                for i in 0..self.in_ch {
                    let x_plane = x.plane(b, i);
                    for ky in 0..k {
                        let iy_range = loop_range(ky, s, p, oh, x.h);
                        for kx in 0..k {
                            let wv = self.w_at(i, o, ky, kx);
                            let ix_range = loop_range(kx, s, p, ow, x.w);
                            for iy in iy_range.clone() {
                                let oy = iy * s + ky - p;
                                let xrow = &x_plane[iy * x.w..(iy + 1) * x.w];
                                let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                                for ix in ix_range.clone() {
                                    let ox = ix * s + kx - p;
                                    orow[ox] = orow[ox] + wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
        if keep_cache {
            self.cache_input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .cache_input
            .take()
            .ok_or_else(|| Error::State("conv-transpose backward before forward".into()))?;
        let (s, p, k) = (self.stride, self.pad, self.k);
        let (oh, ow) = (gy.h, gy.w);

        // Weight gradient, parallel over input channels (disjoint gw rows).
        let gw_stride = self.out_ch * k * k;
        self.grad_weight
            .par_chunks_mut(gw_stride)
            .enumerate()
            .for_each(|(i, gw_i)| {
                for b in 0..x.n {
                    let x_plane = x.plane(b, i);
                    for o in 0..self.out_ch {
                        let gy_plane = gy.plane(b, o);
                        for ky in 0..k {
                            let iy_range = loop_range(ky, s, p, oh, x.h);
                            for kx in 0..k {
                                let ix_range = loop_range(kx, s, p, ow, x.w);
                                let mut acc = T::zero();
                                for iy in iy_range.clone() {
                                    let oy = iy * s + ky - p;
                                    let xrow = &x_plane[iy * x.w..(iy + 1) * x.w];
                                    let grow = &gy_plane[oy * ow..(oy + 1) * ow];
                                    for ix in ix_range.clone() {
                                        let ox = ix * s + kx - p;
                                        acc = acc + xrow[ix] * grow[ox];
                                    }
                                }
                                let wi = (o * k + ky) * k + kx;
                                gw_i[wi] = gw_i[wi] + acc;
                            }
                        }
                    }
                }
            });

        // Input gradient: a plain convolution of gy with the kernel.
        let mut gx = Tensor4::zeros(x.n, self.in_ch, x.h, x.w);
        let chunk = self.in_ch * x.h * x.w;
        let plane_in = x.h * x.w;
        gx.data.par_chunks_mut(chunk).enumerate().for_each(|(b, gxb)| {
            for i in 0..self.in_ch {
                let gx_plane = &mut gxb[i * plane_in..(i + 1) * plane_in];
                for o in 0..self.out_ch {
                    let gy_plane = gy.plane(b, o);
                    for ky in 0..k {
                        let iy_range = loop_range(ky, s, p, oh, x.h);
                        for kx in 0..k {
                            let wv = self.w_at(i, o, ky, kx);
                            let ix_range = loop_range(kx, s, p, ow, x.w);
                            for iy in iy_range.clone() {
                                let oy = iy * s + ky - p;
                                let grow = &gy_plane[oy * ow..(oy + 1) * ow];
                                let xrow = &mut gx_plane[iy * x.w..(iy + 1) * x.w];
                                for ix in ix_range.clone() {
                                    let ox = ix * s + kx - p;
                                    xrow[ix] = xrow[ix] + wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

/// Per-channel batch normalization with learnable scale and shift.
/// Training mode normalizes by (biased) batch statistics and updates the
/// running estimates; eval mode normalizes by the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub ch: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    x_hat: Tensor4<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(ch: usize) -> Self {
        BatchNorm2d {
            ch,
            gamma: vec![T::one(); ch],
            beta: vec![T::zero(); ch],
            grad_gamma: vec![T::zero(); ch],
            grad_beta: vec![T::zero(); ch],
            running_mean: vec![T::zero(); ch],
            running_var: vec![T::one(); ch],
            eps: T::of_f64(1e-5),
            momentum: T::of_f64(0.1),
            cache: None,
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.ch
    }

    pub fn forward(&mut self, x: &Tensor4<T>, training: bool, keep_cache: bool) -> Tensor4<T> {
        assert_eq!(x.c, self.ch, "batchnorm channels");
        let plane = x.h * x.w;
        let m = x.n * plane;
        let m_t = T::of_f64(m as f64);
        let mut out = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut x_hat = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std_all = vec![T::zero(); self.ch];

        for c in 0..self.ch {
            let (mean, var) = if training {
                let mut sum = T::zero();
                for b in 0..x.n {
                    for &v in x.plane(b, c) {
                        sum = sum + v;
                    }
                }
                let mean = sum / m_t;
                let mut var_sum = T::zero();
                for b in 0..x.n {
                    for &v in x.plane(b, c) {
                        let d = v - mean;
                        var_sum = var_sum + d * d;
                    }
                }
                let var = var_sum / m_t;
                // Running stats track the same biased variance used for
                // normalization, so eval mode converges exactly to train
                // mode on a fixed batch; an unbiased correction would be
                // large at the small bottleneck feature maps (m as low as
                // 4) and leave a permanent train/eval gap.
                let one = T::one();
                self.running_mean[c] =
                    (one - self.momentum) * self.running_mean[c] + self.momentum * mean;
                self.running_var[c] =
                    (one - self.momentum) * self.running_var[c] + self.momentum * var;
                (mean, var)
            } else {
                (self.running_mean[c], self.running_var[c])
            };
            let inv_std = T::one() / (var + self.eps).sqrt();
            inv_std_all[c] = inv_std;
            let g = self.gamma[c];
            let be = self.beta[c];
            for b in 0..x.n {
                let base = (b * x.c + c) * plane;
                for j in 0..plane {
                    let xh = (x.data[base + j] - mean) * inv_std;
                    x_hat.data[base + j] = xh;
                    out.data[base + j] = g * xh + be;
                }
            }
        }
        if keep_cache {
            self.cache = Some(BnCache { x_hat, inv_std: inv_std_all });
        }
        out
    }

    pub fn backward(&mut self, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batchnorm backward before forward".into()))?;
        let x_hat = &cache.x_hat;
        let plane = gy.h * gy.w;
        let m = gy.n * plane;
        let m_t = T::of_f64(m as f64);
        let mut gx = Tensor4::zeros(gy.n, gy.c, gy.h, gy.w);
        for c in 0..self.ch {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..gy.n {
                let base = (b * gy.c + c) * plane;
                for j in 0..plane {
                    let g = gy.data[base + j];
                    sum_g = sum_g + g;
                    sum_gx = sum_gx + g * x_hat.data[base + j];
                }
            }
            self.grad_beta[c] = self.grad_beta[c] + sum_g;
            self.grad_gamma[c] = self.grad_gamma[c] + sum_gx;
            let coef = self.gamma[c] * cache.inv_std[c];
            let mean_g = sum_g / m_t;
            let mean_gx = sum_gx / m_t;
            for b in 0..gy.n {
                let base = (b * gy.c + c) * plane;
                for j in 0..plane {
                    let g = gy.data[base + j];
                    gx.data[base + j] = coef * (g - mean_g - x_hat.data[base + j] * mean_gx);
                }
            }
        }
        Ok(gx)
    }
}

// ---------------------------------------------------------------------------
// ConvBlock
// ---------------------------------------------------------------------------

/// Either convolution flavor behind one interface.
#[derive(Debug, Clone)]
pub enum ConvOp<T> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
}

impl<T: Scalar> ConvOp<T> {
    pub fn in_ch(&self) -> usize {
        match self {
            ConvOp::Conv(c) => c.in_ch,
            ConvOp::ConvT(c) => c.in_ch,
        }
    }

    pub fn out_ch(&self) -> usize {
        match self {
            ConvOp::Conv(c) => c.out_ch,
            ConvOp::ConvT(c) => c.out_ch,
        }
    }

    pub fn kernel(&self) -> usize {
        match self {
            ConvOp::Conv(c) => c.k,
            ConvOp::ConvT(c) => c.k,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            ConvOp::Conv(c) => c.num_params(),
            ConvOp::ConvT(c) => c.num_params(),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, keep_cache: bool) -> Tensor4<T> {
        match self {
            ConvOp::Conv(c) => c.forward(x, keep_cache),
            ConvOp::ConvT(c) => c.forward(x, keep_cache),
        }
    }

    fn backward(&mut self, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            ConvOp::Conv(c) => c.backward(gy),
            ConvOp::ConvT(c) => c.backward(gy),
        }
    }
}

/// One schedule step: batchnorm, optional ReLU, convolution; `dense` blocks
/// concatenate their input with the convolution output along channels.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub bn: BatchNorm2d<T>,
    pub relu: bool,
    pub op: ConvOp<T>,
    pub dense: bool,
    relu_mask: Option<Vec<bool>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(bn: BatchNorm2d<T>, relu: bool, op: ConvOp<T>, dense: bool) -> Self {
        ConvBlock { bn, relu, op, dense, relu_mask: None }
    }

    pub fn in_ch(&self) -> usize {
        self.op.in_ch()
    }

    pub fn out_ch(&self) -> usize {
        if self.dense {
            self.op.in_ch() + self.op.out_ch()
        } else {
            self.op.out_ch()
        }
    }

    pub fn num_params(&self) -> usize {
        self.bn.num_params() + self.op.num_params()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, training: bool, keep_cache: bool) -> Tensor4<T> {
        let mut h = self.bn.forward(x, training, keep_cache);
        if self.relu {
            let mut mask = Vec::new();
            if keep_cache {
                mask.reserve(h.data.len());
            }
            for v in &mut h.data {
                let pos = *v > T::zero();
                if keep_cache {
                    mask.push(pos);
                }
                if !pos {
                    *v = T::zero();
                }
            }
            if keep_cache {
                self.relu_mask = Some(mask);
            }
        }
        let y = self.op.forward(&h, keep_cache);
        y.debug_assert_finite("conv block output");
        if self.dense {
            Tensor4::concat_channels(x, &y)
        } else {
            y
        }
    }

    pub fn backward(&mut self, gy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (g_pass, g_conv);
        let gy_op = if self.dense {
            let (a, b) = gy.split_channels(self.op.in_ch());
            g_pass = Some(a);
            g_conv = b;
            &g_conv
        } else {
            g_pass = None;
            gy
        };
        let mut gh = self.op.backward(gy_op)?;
        if self.relu {
            let mask = self
                .relu_mask
                .take()
                .ok_or_else(|| Error::State("relu backward before forward".into()))?;
            for (g, keep) in gh.data.iter_mut().zip(&mask) {
                if !keep {
                    *g = T::zero();
                }
            }
        }
        let mut gx = self.bn.backward(&gh)?;
        if let Some(gp) = g_pass {
            for (a, b) in gx.data.iter_mut().zip(&gp.data) {
                *a = *a + *b;
            }
        }
        Ok(gx)
    }

    /// Visit (values, grads) pairs in checkpoint order: gamma, beta, weight.
    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut [T], &mut [T])) {
        f(&mut self.bn.gamma, &mut self.bn.grad_gamma);
        f(&mut self.bn.beta, &mut self.bn.grad_beta);
        match &mut self.op {
            ConvOp::Conv(c) => f(&mut c.weight, &mut c.grad_weight),
            ConvOp::ConvT(c) => f(&mut c.weight, &mut c.grad_weight),
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, g| {
            for v in g {
                *v = T::zero();
            }
        });
    }
}
