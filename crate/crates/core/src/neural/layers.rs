//! Layers with explicit forward caches and hand-written backward passes.

use rand::Rng;

use super::tensor::{gemm, real, Real, Tensor};

/// A trainable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(shape);
        p.value.iter_mut().for_each(|x| *x = real(v));
        p
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for x in &mut p.value {
            *x = real(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Collects `(name, param)` pairs in a fixed order.
pub trait Module<T: Real> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>);
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Same-padding convolution with kernel 1 or 3, stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in·k·k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

pub struct ConvCache<T> {
    cols: Vec<T>,
    batch: usize,
    height: usize,
    width: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel == 1 || kernel == 3, "kernel must be 1 or 3");
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::uniform(&[out_channels, in_channels * kernel * kernel], bound, rng),
            bias: Param::uniform(&[out_channels], bound, rng),
        }
    }

    /// Scales the initial weights and zeroes the bias.
    pub fn scaled(mut self, factor: f64) -> Self {
        let f: T = real(factor);
        self.weight.value.iter_mut().for_each(|w| *w = *w * f);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
        self
    }

    fn im2col(&self, x: &Tensor<T>) -> Vec<T> {
        if self.kernel == 1 {
            return x.data.clone();
        }
        let (n, h, w) = (x.batch, x.height, x.width);
        let cols_per_row = n * h * w;
        let mut cols = vec![T::zero(); x.channels * 9 * cols_per_row];
        for ci in 0..x.channels {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = (ci * 9 + ky * 3 + kx) * cols_per_row;
                    for b in 0..n {
                        let src = x.plane(ci, b);
                        let dst = &mut cols[row + b * h * w..row + (b + 1) * h * w];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            match kx {
                                0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                                1 => drow.copy_from_slice(srow),
                                _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], batch: usize, h: usize, w: usize) -> Tensor<T> {
        let mut dx = Tensor::zeros(self.in_channels, batch, h, w);
        if self.kernel == 1 {
            dx.data.copy_from_slice(cols);
            return dx;
        }
        let cols_per_row = batch * h * w;
        for ci in 0..self.in_channels {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = (ci * 9 + ky * 3 + kx) * cols_per_row;
                    for b in 0..batch {
                        let src = &cols[row + b * h * w..row + (b + 1) * h * w];
                        let dst = dx.plane_mut(ci, b);
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[y * w..(y + 1) * w];
                            let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                            match kx {
                                0 => drow[..w - 1]
                                    .iter_mut()
                                    .zip(&srow[1..])
                                    .for_each(|(d, &s)| *d = *d + s),
                                1 => drow.iter_mut().zip(srow).for_each(|(d, &s)| *d = *d + s),
                                _ => drow[1..]
                                    .iter_mut()
                                    .zip(&srow[..w - 1])
                                    .for_each(|(d, &s)| *d = *d + s),
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        debug_assert_eq!(x.channels, self.in_channels);
        let cols = self.im2col(x);
        let ncols = x.channel_len();
        let mut out = Tensor::zeros(self.out_channels, x.batch, x.height, x.width);
        for (o, &b) in self.bias.value.iter().enumerate() {
            out.data[o * ncols..(o + 1) * ncols].iter_mut().for_each(|v| *v = b);
        }
        let k = self.in_channels * self.kernel * self.kernel;
        gemm(self.out_channels, k, ncols, &self.weight.value, false, &cols, false, &mut out.data, T::one());
        (
            out,
            ConvCache {
                cols,
                batch: x.batch,
                height: x.height,
                width: x.width,
            },
        )
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward(x).0
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ncols = dy.channel_len();
        let k = self.in_channels * self.kernel * self.kernel;
        // dW += dy · colsᵀ
        gemm(self.out_channels, ncols, k, &dy.data, false, &cache.cols, true, &mut self.weight.grad, T::one());
        for o in 0..self.out_channels {
            let s: T = dy.data[o * ncols..(o + 1) * ncols].iter().copied().sum();
            self.bias.grad[o] = self.bias.grad[o] + s;
        }
        // dcols = Wᵀ · dy
        let mut dcols = vec![T::zero(); k * ncols];
        gemm(k, self.out_channels, ncols, &self.weight.value, true, &dy.data, false, &mut dcols, T::zero());
        self.col2im(&dcols, cache.batch, cache.height, cache.width)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Picks the group count: the largest of 8, 4, 2, 1 that divides `channels`.
pub fn default_groups(channels: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub channels: usize,
    pub groups: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

pub struct NormCache<T> {
    x_hat: Vec<T>,
    /// `[batch, groups]`
    inv_std: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            groups: default_groups(channels),
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        let cpg = self.channels / self.groups;
        let p = x.plane_len();
        let count: T = real((cpg * p) as f64);
        let eps: T = real(NORM_EPS);
        let mut out = Tensor::zeros(x.channels, x.batch, x.height, x.width);
        let mut x_hat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); x.batch * self.groups];
        for n in 0..x.batch {
            for g in 0..self.groups {
                let chans = g * cpg..(g + 1) * cpg;
                let mut mean = T::zero();
                for c in chans.clone() {
                    mean = mean + x.plane(c, n).iter().copied().sum::<T>();
                }
                mean = mean / count;
                let mut var = T::zero();
                for c in chans.clone() {
                    var = var + x.plane(c, n).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                }
                var = var / count;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[n * self.groups + g] = inv;
                for c in chans {
                    let start = (c * x.batch + n) * p;
                    let (ga, be) = (self.gamma.value[c], self.beta.value[c]);
                    for i in start..start + p {
                        let xh = (x.data[i] - mean) * inv;
                        x_hat[i] = xh;
                        out.data[i] = xh * ga + be;
                    }
                }
            }
        }
        (out, NormCache { x_hat, inv_std })
    }

    pub fn backward(&mut self, cache: &NormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let cpg = self.channels / self.groups;
        let p = dy.plane_len();
        let count: T = real((cpg * p) as f64);
        let mut dx = Tensor::zeros(dy.channels, dy.batch, dy.height, dy.width);
        for c in 0..self.channels {
            let range = c * dy.channel_len()..(c + 1) * dy.channel_len();
            let mut dg = T::zero();
            let mut db = T::zero();
            for i in range {
                dg = dg + dy.data[i] * cache.x_hat[i];
                db = db + dy.data[i];
            }
            self.gamma.grad[c] = self.gamma.grad[c] + dg;
            self.beta.grad[c] = self.beta.grad[c] + db;
        }
        for n in 0..dy.batch {
            for g in 0..self.groups {
                let inv = cache.inv_std[n * self.groups + g];
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for c in g * cpg..(g + 1) * cpg {
                    let start = (c * dy.batch + n) * p;
                    let ga = self.gamma.value[c];
                    for i in start..start + p {
                        let d = dy.data[i] * ga;
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * cache.x_hat[i];
                    }
                }
                let (mean_d, mean_dx) = (sum_d / count, sum_dx / count);
                for c in g * cpg..(g + 1) * cpg {
                    let start = (c * dy.batch + n) * p;
                    let ga = self.gamma.value[c];
                    for i in start..start + p {
                        let d = dy.data[i] * ga;
                        dx.data[i] = inv * (d - mean_d - cache.x_hat[i] * mean_dx);
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for GroupNorm<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

/// Dense layer over row-major `[batch, in]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::uniform(&[outputs, inputs], bound, rng),
            bias: Param::uniform(&[outputs], bound, rng),
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(batch, self.inputs, self.outputs, x, false, &self.weight.value, true, &mut out, T::one());
        out
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], batch: usize) -> Vec<T> {
        gemm(self.outputs, batch, self.inputs, dy, true, x, false, &mut self.weight.grad, T::one());
        for n in 0..batch {
            for o in 0..self.outputs {
                self.bias.grad[o] = self.bias.grad[o] + dy[n * self.outputs + o];
            }
        }
        let mut dx = vec![T::zero(); batch * self.inputs];
        gemm(batch, self.outputs, self.inputs, dy, false, &self.weight.value, false, &mut dx, T::zero());
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient of SiLU given its input `x`.
pub fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

pub fn silu_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: silu(&x.data),
        ..x.clone_shape()
    }
}

pub fn silu_tensor_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        data: silu_backward(&x.data, &dy.data),
        ..x.clone_shape()
    }
}

impl<T: Real> Tensor<T> {
    pub(crate) fn clone_shape(&self) -> Tensor<T> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: Vec::new(),
        }
    }
}

/// 2×2 average pooling.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height / 2, x.width / 2);
    let quarter: T = real(0.25);
    let mut out = Tensor::zeros(x.channels, x.batch, h, w);
    for c in 0..x.channels {
        for n in 0..x.batch {
            let src = x.plane(c, n);
            let dst = out.plane_mut(c, n);
            for y in 0..h {
                for xx in 0..w {
                    let i = 2 * y * x.width + 2 * xx;
                    dst[y * w + xx] =
                        (src[i] + src[i + 1] + src[i + x.width] + src[i + x.width + 1]) * quarter;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height * 2, dy.width * 2);
    let quarter: T = real(0.25);
    let mut dx = Tensor::zeros(dy.channels, dy.batch, h, w);
    for c in 0..dy.channels {
        for n in 0..dy.batch {
            let src = dy.plane(c, n);
            let dst = dx.plane_mut(c, n);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = src[(y / 2) * dy.width + x / 2] * quarter;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Tensor::zeros(x.channels, x.batch, h, w);
    for c in 0..x.channels {
        for n in 0..x.batch {
            let src = x.plane(c, n);
            let dst = out.plane_mut(c, n);
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / 2) * x.width + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, dy.batch, h, w);
    for c in 0..dy.channels {
        for n in 0..dy.batch {
            let src = dy.plane(c, n);
            let dst = dx.plane_mut(c, n);
            for y in 0..dy.height {
                for x in 0..dy.width {
                    dst[(y / 2) * w + x / 2] = dst[(y / 2) * w + x / 2] + src[y * dy.width + x];
                }
            }
        }
    }
    dx
}

/// Sinusoidal embedding of integer timesteps, `[sin(t·f_i), cos(t·f_i)]` with
/// `f_i = 10000^(−i/half)`; row-major `[batch, dim]`.
pub fn timestep_embedding<T: Real>(steps: &[usize], dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        for i in 0..half {
            let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
            out.push(real((t as f64 * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10000f64).ln() * i as f64 / half as f64).exp();
            out.push(real((t as f64 * freq).cos()));
        }
        for _ in 2 * half..dim {
            out.push(T::zero());
        }
    }
    out
}
