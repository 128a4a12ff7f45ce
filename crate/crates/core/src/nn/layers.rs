//! Layer primitives with explicit forward/backward passes.
//!
//! Convolutions use the DCGAN geometry: 4×4 kernels, stride 2, padding 1,
//! so a strided convolution halves the spatial size and a transposed
//! convolution doubles it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

pub const LEAKY_SLOPE: f64 = 0.2;

fn init_weights(n: usize, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let std = gain / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Fully connected layer, weights stored row-major as `[out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    #[serde(with = "super::f64_b64")]
    pub weight: Vec<f64>,
    #[serde(with = "super::f64_b64")]
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn is_consistent(&self) -> bool {
        self.weight.len() == self.inputs * self.outputs && self.bias.len() == self.outputs
    }

    pub fn new(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            inputs,
            outputs,
            weight: init_weights(inputs * outputs, inputs, gain, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(shape_err(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok(self
            .weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect())
    }

    /// Returns the gradient w.r.t. the input; accumulates parameter
    /// gradients into `grads` when given (`[weight, bias]`).
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: Option<(&mut [f64], &mut [f64])>) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (row, g) in self.weight.chunks_exact(self.inputs).zip(grad_out) {
            for (gi, w) in grad_in.iter_mut().zip(row) {
                *gi += w * g;
            }
        }
        if let Some((gw, gb)) = grads {
            for ((row, gbo), g) in gw.chunks_exact_mut(self.inputs).zip(gb.iter_mut()).zip(grad_out) {
                *gbo += g;
                for (gwi, v) in row.iter_mut().zip(x) {
                    *gwi += g * v;
                }
            }
        }
        grad_in
    }
}

/// Strided convolution, weights `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(with = "super::f64_b64")]
    pub weight: Vec<f64>,
    #[serde(with = "super::f64_b64")]
    pub bias: Vec<f64>,
}

#[inline]
fn down_range(k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // output positions o with 0 <= o*STRIDE + k - PAD < in_len
    let lo = if k >= PAD { 0 } else { (PAD - k).div_ceil(STRIDE) };
    let hi = if in_len + PAD > k {
        ((in_len + PAD - k - 1) / STRIDE + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Conv2d {
    pub fn is_consistent(&self) -> bool {
        self.weight.len() == self.in_channels * self.out_channels * KERNEL * KERNEL && self.bias.len() == self.out_channels
    }

    pub fn new(in_channels: usize, out_channels: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let n = out_channels * in_channels * KERNEL * KERNEL;
        Self {
            in_channels,
            out_channels,
            weight: init_weights(n, in_channels * KERNEL * KERNEL, gain, rng),
            bias: vec![0.0; out_channels],
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.shape();
        if c != self.in_channels || h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(shape_err(format!(
                "conv expects {} channels with even spatial size, got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (_, h, w) = x.shape();
        let (oh, ow) = (h / STRIDE, w / STRIDE);
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        let kk = KERNEL * KERNEL;
        for oc in 0..self.out_channels {
            let dst = out.channel_mut(oc);
            dst.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = x.channel(ic);
                let wbase = (oc * self.in_channels + ic) * kk;
                for ky in 0..KERNEL {
                    let (oy0, oy1) = down_range(ky, h, oh);
                    for kx in 0..KERNEL {
                        let wv = self.weight[wbase + ky * KERNEL + kx];
                        let (ox0, ox1) = down_range(kx, w, ow);
                        for oy in oy0..oy1 {
                            let iy = oy * STRIDE + ky - PAD;
                            let srow = &src[iy * w..(iy + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                drow[ox] += wv * srow[ox * STRIDE + kx - PAD];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient w.r.t. the input (skipped when `need_input` is false) and
    /// accumulated parameter gradients (`[weight, bias]`) when given.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        need_input: bool,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Option<Tensor> {
        let (_, h, w) = x.shape();
        let (oh, ow) = (h / STRIDE, w / STRIDE);
        let kk = KERNEL * KERNEL;
        let mut grad_in = need_input.then(|| Tensor::zeros(self.in_channels, h, w));
        let mut grads = grads;
        for oc in 0..self.out_channels {
            let g = grad_out.channel(oc);
            if let Some((_, gb)) = grads.as_mut() {
                gb[oc] += g.iter().sum::<f64>();
            }
            for ic in 0..self.in_channels {
                let src = x.channel(ic);
                let wbase = (oc * self.in_channels + ic) * kk;
                for ky in 0..KERNEL {
                    let (oy0, oy1) = down_range(ky, h, oh);
                    for kx in 0..KERNEL {
                        let widx = wbase + ky * KERNEL + kx;
                        let wv = self.weight[widx];
                        let (ox0, ox1) = down_range(kx, w, ow);
                        if let Some((gw, _)) = grads.as_mut() {
                            let mut acc = 0.0;
                            for oy in oy0..oy1 {
                                let iy = oy * STRIDE + ky - PAD;
                                let srow = &src[iy * w..(iy + 1) * w];
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                for ox in ox0..ox1 {
                                    acc += grow[ox] * srow[ox * STRIDE + kx - PAD];
                                }
                            }
                            gw[widx] += acc;
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let dst = gi.channel_mut(ic);
                            for oy in oy0..oy1 {
                                let iy = oy * STRIDE + ky - PAD;
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                let drow = &mut dst[iy * w..(iy + 1) * w];
                                for ox in ox0..ox1 {
                                    drow[ox * STRIDE + kx - PAD] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// Transposed (fractionally strided) convolution, weights `[in][out][ky][kx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(with = "super::f64_b64")]
    pub weight: Vec<f64>,
    #[serde(with = "super::f64_b64")]
    pub bias: Vec<f64>,
}

impl ConvTranspose2d {
    pub fn is_consistent(&self) -> bool {
        self.weight.len() == self.in_channels * self.out_channels * KERNEL * KERNEL && self.bias.len() == self.out_channels
    }

    pub fn new(in_channels: usize, out_channels: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let n = in_channels * out_channels * KERNEL * KERNEL;
        // each output pixel receives in_channels * 4 taps
        Self {
            in_channels,
            out_channels,
            weight: init_weights(n, in_channels * 4, gain, rng),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.shape();
        if c != self.in_channels {
            return Err(shape_err(format!(
                "transposed conv expects {} channels, got {}",
                self.in_channels, c
            )));
        }
        let (oh, ow) = (h * STRIDE, w * STRIDE);
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for oc in 0..self.out_channels {
            out.channel_mut(oc).fill(self.bias[oc]);
        }
        let kk = KERNEL * KERNEL;
        for ic in 0..self.in_channels {
            let src = x.channel(ic);
            for oc in 0..self.out_channels {
                let wbase = (ic * self.out_channels + oc) * kk;
                let dst = out.channel_mut(oc);
                for ky in 0..KERNEL {
                    // input rows iy with 0 <= iy*2 + ky - 1 < oh  <=>  same as down_range over (oh -> h)
                    let (iy0, iy1) = down_range(ky, oh, h);
                    for kx in 0..KERNEL {
                        let wv = self.weight[wbase + ky * KERNEL + kx];
                        let (ix0, ix1) = down_range(kx, ow, w);
                        for iy in iy0..iy1 {
                            let oy = iy * STRIDE + ky - PAD;
                            let srow = &src[iy * w..(iy + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for ix in ix0..ix1 {
                                drow[ix * STRIDE + kx - PAD] += wv * srow[ix];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        need_input: bool,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Option<Tensor> {
        let (_, h, w) = x.shape();
        let (oh, ow) = (h * STRIDE, w * STRIDE);
        let kk = KERNEL * KERNEL;
        let mut grad_in = need_input.then(|| Tensor::zeros(self.in_channels, h, w));
        let mut grads = grads;
        if let Some((_, gb)) = grads.as_mut() {
            for oc in 0..self.out_channels {
                gb[oc] += grad_out.channel(oc).iter().sum::<f64>();
            }
        }
        for ic in 0..self.in_channels {
            let src = x.channel(ic);
            for oc in 0..self.out_channels {
                let wbase = (ic * self.out_channels + oc) * kk;
                let g = grad_out.channel(oc);
                for ky in 0..KERNEL {
                    let (iy0, iy1) = down_range(ky, oh, h);
                    for kx in 0..KERNEL {
                        let widx = wbase + ky * KERNEL + kx;
                        let wv = self.weight[widx];
                        let (ix0, ix1) = down_range(kx, ow, w);
                        let mut acc = 0.0;
                        for iy in iy0..iy1 {
                            let oy = iy * STRIDE + ky - PAD;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let srow = &src[iy * w..(iy + 1) * w];
                            for ix in ix0..ix1 {
                                acc += grow[ix * STRIDE + kx - PAD] * srow[ix];
                            }
                        }
                        if let Some((gw, _)) = grads.as_mut() {
                            gw[widx] += acc;
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let dst = gi.channel_mut(ic);
                            for iy in iy0..iy1 {
                                let oy = iy * STRIDE + ky - PAD;
                                let grow = &g[oy * ow..(oy + 1) * ow];
                                let drow = &mut dst[iy * w..(iy + 1) * w];
                                for ix in ix0..ix1 {
                                    drow[ix] += wv * grow[ix * STRIDE + kx - PAD];
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Multiplies `grad` in place by the activation derivative evaluated at the pre-activation `pre`.
pub fn relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn leaky_relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

/// `grad *= 1 - y²` where `y = tanh(pre)` is the stored output.
pub fn tanh_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &y) in grad.data_mut().iter_mut().zip(out.data()) {
        *g *= 1.0 - y * y;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Direct definition: out[oc,oy,ox] = b + sum w[oc,ic,ky,kx] * x[ic, 2oy+ky-1, 2ox+kx-1]
    fn naive_conv(c: &Conv2d, x: &Tensor) -> Tensor {
        let (_, h, w) = x.shape();
        let mut out = Tensor::zeros(c.out_channels, h / 2, w / 2);
        for oc in 0..c.out_channels {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut s = c.bias[oc];
                    for ic in 0..c.in_channels {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += c.weight[((oc * c.in_channels + ic) * 4 + ky) * 4 + kx]
                                    * x.get(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(oc, oy, ox, s);
                }
            }
        }
        out
    }

    fn naive_deconv(c: &ConvTranspose2d, x: &Tensor) -> Tensor {
        let (_, h, w) = x.shape();
        let mut out = Tensor::zeros(c.out_channels, h * 2, w * 2);
        for oc in 0..c.out_channels {
            for oy in 0..h * 2 {
                for ox in 0..w * 2 {
                    out.set(oc, oy, ox, c.bias[oc]);
                }
            }
        }
        for ic in 0..c.in_channels {
            for iy in 0..h {
                for ix in 0..w {
                    for oc in 0..c.out_channels {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let oy = (iy * 2 + ky) as isize - 1;
                                let ox = (ix * 2 + kx) as isize - 1;
                                if oy < 0 || ox < 0 || oy >= 2 * h as isize || ox >= 2 * w as isize {
                                    continue;
                                }
                                let (oy, ox) = (oy as usize, ox as usize);
                                let v = out.get(oc, oy, ox)
                                    + c.weight[((ic * c.out_channels + oc) * 4 + ky) * 4 + kx] * x.get(ic, iy, ix);
                                out.set(oc, oy, ox, v);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(3, 4, 1.0, &mut rng);
        conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        for size in [2, 4, 8] {
            let x = random_tensor(3, size, size, &mut rng);
            let a = conv.forward(&x).unwrap();
            let b = naive_conv(&conv, &x);
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deconv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut dc = ConvTranspose2d::new(3, 2, 1.0, &mut rng);
        dc.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        for size in [1, 2, 4] {
            let x = random_tensor(3, size, size, &mut rng);
            let a = dc.forward(&x).unwrap();
            let b = naive_deconv(&dc, &x);
            assert_eq!(a.shape(), (2, size * 2, size * 2));
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    // <grad_out, J·v> must equal <J^T·grad_out, v> for a linear map.
    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv2d::new(2, 3, 1.0, &mut rng);
        let deconv = ConvTranspose2d::new(2, 3, 1.0, &mut rng);
        let x = random_tensor(2, 8, 8, &mut rng);
        let g = random_tensor(3, 4, 4, &mut rng);
        let mut zero_bias = conv.clone();
        zero_bias.bias.fill(0.0);
        let y = zero_bias.forward(&x).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gi = conv.backward(&x, &g, true, None).unwrap();
        let rhs: f64 = gi.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let xd = random_tensor(2, 4, 4, &mut rng);
        let gd = random_tensor(3, 8, 8, &mut rng);
        let mut zb = deconv.clone();
        zb.bias.fill(0.0);
        let yd = zb.forward(&xd).unwrap();
        let lhs: f64 = yd.data().iter().zip(gd.data()).map(|(a, b)| a * b).sum();
        let gi = deconv.backward(&xd, &gd, true, None).unwrap();
        let rhs: f64 = gi.data().iter().zip(xd.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        let q = softmax(&[0.3, 0.3]);
        assert!((q[0] - 0.5).abs() < 1e-15);
    }
}
