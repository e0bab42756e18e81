//! Layer primitives with hand-rolled reverse-mode differentiation.
//!
//! Each layer caches what its backward pass needs during forward and
//! reports an error if backward runs first. All math is f64; learnable
//! parameters are kept on the f32 grid (snapped after init and after
//! every optimizer step) so the 32-bit model file round-trips without
//! changing network outputs.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::tensor::Tensor;

/// Snaps a value to the nearest f32.
#[inline]
pub fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

/// A learnable parameter vector with gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    pub fn new(mut value: Vec<f64>) -> Self {
        for v in value.iter_mut() {
            *v = to_f32_grid(*v);
        }
        let n = value.len();
        Param {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// One Adam update with bias correction at global step `t` (1-based),
    /// followed by a snap back to the f32 grid.
    pub fn adam_step(&mut self, t: u64, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for k in 0..self.value.len() {
            let g = self.grad[k];
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            self.value[k] = to_f32_grid(self.value[k] - lr * mhat / (vhat.sqrt() + eps));
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// 3x3 convolution (or transposed convolution) with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub transposed: bool,
    /// [out][in][ky][kx] for conv, [in][out][ky][kx] for deconv.
    pub weight: Param,
    pub bias: Param,
    cache_input: Option<Tensor>,
}

impl Conv {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        // Fan-in-scaled normal init (He et al.) for ReLU networks.
        let fan_in = (in_ch * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight: Vec<f64> = (0..out_ch * in_ch * k * k)
            .map(|_| rng.next_normal() * std)
            .collect();
        Conv {
            in_ch,
            out_ch,
            k,
            stride,
            dilation,
            pad,
            out_pad: 0,
            transposed: false,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_ch]),
            cache_input: None,
        }
    }

    /// Transposed convolution doubling the spatial size (k 3, stride 2,
    /// pad 1, output padding 1).
    pub fn new_upsample(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        let k = 3;
        let fan_in = (in_ch * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight: Vec<f64> = (0..in_ch * out_ch * k * k)
            .map(|_| rng.next_normal() * std)
            .collect();
        Conv {
            in_ch,
            out_ch,
            k,
            stride: 2,
            dilation: 1,
            pad: 1,
            out_pad: 1,
            transposed: true,
            weight: Param::new(weight),
            bias: Param::new(vec![0.0; out_ch]),
            cache_input: None,
        }
    }

    pub fn zero_weights(&mut self) {
        self.weight.value.iter_mut().for_each(|v| *v = 0.0);
        self.bias.value.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transposed {
            let oh = (h - 1) * self.stride + self.dilation * (self.k - 1) + 1 + self.out_pad
                - 2 * self.pad;
            let ow = (w - 1) * self.stride + self.dilation * (self.k - 1) + 1 + self.out_pad
                - 2 * self.pad;
            (oh, ow)
        } else {
            let span = self.dilation * (self.k - 1) + 1;
            let oh = (h + 2 * self.pad - span) / self.stride + 1;
            let ow = (w + 2 * self.pad - span) / self.stride + 1;
            (oh, ow)
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.shape();
        if n != 1 {
            return Err(Error::InvalidArgument("batch size must be 1".into()));
        }
        if c != self.in_ch {
            return Err(Error::DimensionMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        let (oh, ow) = self.out_size(h, w);
        let mut out = Tensor::zeros(1, self.out_ch, oh, ow);
        if self.transposed {
            self.forward_transposed(x, &mut out);
        } else {
            self.forward_direct(x, &mut out);
        }
        self.cache_input = Some(x.clone());
        Ok(out)
    }

    fn forward_direct(&self, x: &Tensor, out: &mut Tensor) {
        let (_, _, h, w) = x.shape();
        let (_, _, oh, ow) = out.shape();
        let (k, s, d, p) = (self.k, self.stride, self.dilation, self.pad);
        for oc in 0..self.out_ch {
            let b = self.bias.value[oc];
            let oplane = out.plane_mut(oc);
            oplane.iter_mut().for_each(|v| *v = b);
            for ic in 0..self.in_ch {
                let xplane = x.plane(ic);
                let wbase = ((oc * self.in_ch) + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight.value[wbase + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * s + ky * d) as isize - p as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let xrow = &xplane[iy as usize * w..iy as usize * w + w];
                            let orow = &mut oplane[oy * ow..oy * ow + ow];
                            for ox in 0..ow {
                                let ix = (ox * s + kx * d) as isize - p as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                orow[ox] += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_transposed(&self, x: &Tensor, out: &mut Tensor) {
        let (_, _, h, w) = x.shape();
        let (_, _, oh, ow) = out.shape();
        let (k, s, p) = (self.k, self.stride, self.pad);
        for oc in 0..self.out_ch {
            let b = self.bias.value[oc];
            out.plane_mut(oc).iter_mut().for_each(|v| *v = b);
        }
        for ic in 0..self.in_ch {
            let xplane = x.plane(ic).to_vec();
            for oc in 0..self.out_ch {
                let wbase = ((ic * self.out_ch) + oc) * k * k;
                let oplane = out.plane_mut(oc);
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = xplane[iy * w + ix];
                        if xv == 0.0 {
                            continue;
                        }
                        for ky in 0..k {
                            let oy = (iy * s + ky) as isize - p as isize;
                            if oy < 0 || oy as usize >= oh {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * s + kx) as isize - p as isize;
                                if ox < 0 || ox as usize >= ow {
                                    continue;
                                }
                                oplane[oy as usize * ow + ox as usize] +=
                                    self.weight.value[wbase + ky * k + kx] * xv;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cache_input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("conv backward before forward".into()))?;
        let (_, _, h, w) = x.shape();
        let (_, gc, gh, gw) = grad_out.shape();
        if gc != self.out_ch {
            return Err(Error::DimensionMismatch("conv grad channels".into()));
        }
        let mut grad_in = Tensor::zeros(1, self.in_ch, h, w);
        let (k, s, d, p) = (self.k, self.stride, self.dilation, self.pad);

        if self.transposed {
            for ic in 0..self.in_ch {
                let xplane = x.plane(ic);
                let gin = grad_in.plane_mut(ic);
                for oc in 0..self.out_ch {
                    let gplane = grad_out.plane(oc);
                    let wbase = ((ic * self.out_ch) + oc) * k * k;
                    for iy in 0..h {
                        for ix in 0..w {
                            let xv = xplane[iy * w + ix];
                            let mut acc = 0.0;
                            for ky in 0..k {
                                let oy = (iy * s + ky) as isize - p as isize;
                                if oy < 0 || oy as usize >= gh {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ox = (ix * s + kx) as isize - p as isize;
                                    if ox < 0 || ox as usize >= gw {
                                        continue;
                                    }
                                    let g = gplane[oy as usize * gw + ox as usize];
                                    acc += self.weight.value[wbase + ky * k + kx] * g;
                                    self.weight.grad[wbase + ky * k + kx] += xv * g;
                                }
                            }
                            gin[iy * w + ix] += acc;
                        }
                    }
                }
            }
            for oc in 0..self.out_ch {
                self.bias.grad[oc] += grad_out.plane(oc).iter().sum::<f64>();
            }
        } else {
            for oc in 0..self.out_ch {
                let gplane = grad_out.plane(oc);
                self.bias.grad[oc] += gplane.iter().sum::<f64>();
                for ic in 0..self.in_ch {
                    let xplane = x.plane(ic);
                    let wbase = ((oc * self.in_ch) + ic) * k * k;
                    let gin = grad_in.plane_mut(ic);
                    for oy in 0..gh {
                        for ox in 0..gw {
                            let g = gplane[oy * gw + ox];
                            if g == 0.0 {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = (oy * s + ky * d) as isize - p as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * s + kx * d) as isize - p as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let xi = iy as usize * w + ix as usize;
                                    self.weight.grad[wbase + ky * k + kx] += xplane[xi] * g;
                                    gin[xi] += self.weight.value[wbase + ky * k + kx] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

const VAR_FLOOR: f64 = 1e-5;
const EMA_DECAY: f64 = 0.99;

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    floored: Vec<bool>,
    h: usize,
    w: usize,
}

/// Per-channel spatial normalization (batch-1 batch norm) with learned
/// gain/shift. Training normalizes by the in-batch statistics (variance
/// floored at 1e-5) and maintains EMA statistics (decay 0.99) for
/// inference.
#[derive(Debug, Clone)]
pub struct Norm {
    pub channels: usize,
    pub gain: Param,
    pub shift: Param,
    pub ema_mean: Vec<f64>,
    pub ema_var: Vec<f64>,
    cache: Option<NormCache>,
}

impl Norm {
    pub fn new(channels: usize) -> Self {
        Norm {
            channels,
            gain: Param::new(vec![1.0; channels]),
            shift: Param::new(vec![0.0; channels]),
            ema_mean: vec![0.0; channels],
            ema_var: vec![1.0; channels],
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.shape();
        if n != 1 || c != self.channels {
            return Err(Error::DimensionMismatch("norm input shape".into()));
        }
        if h * w <= 1 {
            return Err(Error::InvalidArgument(
                "norm layer needs spatial extent > 1".into(),
            ));
        }
        let sz = (h * w) as f64;
        let mut out = Tensor::zeros(1, c, h, w);
        if train {
            let mut cache = NormCache {
                xhat: vec![0.0; c * h * w],
                inv_std: vec![0.0; c],
                floored: vec![false; c],
                h,
                w,
            };
            for ch in 0..c {
                let plane = x.plane(ch);
                let mu = plane.iter().sum::<f64>() / sz;
                let var = plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / sz;
                let floored = var < VAR_FLOOR;
                let inv_std = 1.0 / var.max(VAR_FLOOR).sqrt();
                cache.inv_std[ch] = inv_std;
                cache.floored[ch] = floored;
                let (g, s) = (self.gain.value[ch], self.shift.value[ch]);
                let xh = &mut cache.xhat[ch * h * w..(ch + 1) * h * w];
                let op = out.plane_mut(ch);
                for i in 0..h * w {
                    let v = (plane[i] - mu) * inv_std;
                    xh[i] = v;
                    op[i] = g * v + s;
                }
                self.ema_mean[ch] =
                    to_f32_grid(EMA_DECAY * self.ema_mean[ch] + (1.0 - EMA_DECAY) * mu);
                self.ema_var[ch] =
                    to_f32_grid(EMA_DECAY * self.ema_var[ch] + (1.0 - EMA_DECAY) * var);
            }
            self.cache = Some(cache);
        } else {
            for ch in 0..c {
                let plane = x.plane(ch);
                let mu = self.ema_mean[ch];
                let inv_std = 1.0 / self.ema_var[ch].max(VAR_FLOOR).sqrt();
                let (g, s) = (self.gain.value[ch], self.shift.value[ch]);
                let op = out.plane_mut(ch);
                for i in 0..h * w {
                    op[i] = g * (plane[i] - mu) * inv_std + s;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("norm backward before forward".into()))?;
        let (h, w) = (cache.h, cache.w);
        let sz = (h * w) as f64;
        let mut grad_in = Tensor::zeros(1, self.channels, h, w);
        for ch in 0..self.channels {
            let g = grad_out.plane(ch);
            let xh = &cache.xhat[ch * h * w..(ch + 1) * h * w];
            let gain = self.gain.value[ch];
            let inv_std = cache.inv_std[ch];

            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in 0..h * w {
                sum_g += g[i];
                sum_gx += g[i] * xh[i];
            }
            self.shift.grad[ch] += sum_g;
            self.gain.grad[ch] += sum_gx;

            let gp = grad_in.plane_mut(ch);
            if cache.floored[ch] {
                // Variance clamped: only the mean depends on x.
                for i in 0..h * w {
                    gp[i] = gain * inv_std * (g[i] - sum_g / sz);
                }
            } else {
                for i in 0..h * w {
                    gp[i] = gain * inv_std * (g[i] - sum_g / sz - xh[i] * sum_gx / sz);
                }
            }
        }
        Ok(grad_in)
    }

    pub fn weight_count(&self) -> usize {
        self.gain.len() + self.shift.len()
    }
}

/// Elementwise ReLU with cached activation mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
    shape: (usize, usize, usize, usize),
}

impl Relu {
    pub fn new() -> Self {
        Relu {
            mask: None,
            shape: (0, 0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        let mask: Vec<bool> = out
            .data_mut()
            .iter_mut()
            .map(|v| {
                if *v > 0.0 {
                    true
                } else {
                    *v = 0.0;
                    false
                }
            })
            .collect();
        self.mask = Some(mask);
        self.shape = x.shape();
        out
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("relu backward before forward".into()))?;
        let (n, c, h, w) = self.shape;
        let data: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::from_vec(n, c, h, w, data)
    }
}
