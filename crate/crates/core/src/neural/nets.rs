//! The conditional noise estimator and the high-frequency refinement network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, silu, silu_backward, silu_tensor, silu_tensor_backward,
    timestep_embedding, upsample2, upsample2_backward, Conv2d, ConvCache, GroupNorm, Linear,
    Module, NormCache, Param,
};
use super::tensor::{real, Real, Tensor};
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

/// Pre-activation residual block with an optional per-channel time shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub norm1: GroupNorm<T>,
    pub conv1: Conv2d<T>,
    pub time_proj: Option<Linear<T>>,
    pub norm2: GroupNorm<T>,
    pub conv2: Conv2d<T>,
    pub skip: Option<Conv2d<T>>,
}

pub struct ResBlockCache<T> {
    norm1: NormCache<T>,
    /// norm1 output, the SiLU input
    pre1: Tensor<T>,
    conv1: ConvCache<T>,
    norm2: NormCache<T>,
    pre2: Tensor<T>,
    conv2: ConvCache<T>,
    skip: Option<ConvCache<T>>,
}

impl<T: Real> ResBlock<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, time_dim: Option<usize>, rng: &mut R) -> Self {
        Self {
            norm1: GroupNorm::new(cin),
            conv1: Conv2d::new(cin, cout, 3, rng),
            time_proj: time_dim.map(|d| Linear::new(d, cout, rng)),
            norm2: GroupNorm::new(cout),
            conv2: Conv2d::new(cout, cout, 3, rng),
            skip: (cin != cout).then(|| Conv2d::new(cin, cout, 1, rng)),
        }
    }

    /// `time` is the activated embedding, row-major `[batch, time_dim]`.
    pub fn forward(&self, x: &Tensor<T>, time: Option<&[T]>) -> (Tensor<T>, ResBlockCache<T>) {
        let (pre1, norm1) = self.norm1.forward(x);
        let (mut h, conv1) = self.conv1.forward(&silu_tensor(&pre1));
        if let (Some(proj), Some(time)) = (&self.time_proj, time) {
            let shift = proj.forward(time, x.batch);
            for c in 0..h.channels {
                for n in 0..h.batch {
                    let s = shift[n * h.channels + c];
                    h.plane_mut(c, n).iter_mut().for_each(|v| *v = *v + s);
                }
            }
        }
        let (h2, norm2) = self.norm2.forward(&h);
        let a2 = silu_tensor(&h2);
        let (mut out, conv2) = self.conv2.forward(&a2);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, cache) = conv.forward(x);
                out.add_assign(&s);
                Some(cache)
            }
            None => {
                out.add_assign(x);
                None
            }
        };
        (
            out,
            ResBlockCache {
                norm1,
                pre1,
                conv1,
                norm2,
                pre2: h2,
                conv2,
                skip,
            },
        )
    }

    /// Returns the input gradient and, for time-conditioned blocks, the gradient
    /// with respect to the activated embedding.
    pub fn backward(
        &mut self,
        cache: &ResBlockCache<T>,
        dout: &Tensor<T>,
        time: Option<&[T]>,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        let da2 = self.conv2.backward(&cache.conv2, dout);
        let dh2 = silu_tensor_backward(&cache.pre2, &da2);
        let dh = self.norm2.backward(&cache.norm2, &dh2);
        let dtime = match (&mut self.time_proj, time) {
            (Some(proj), Some(time)) => {
                let mut dshift = vec![T::zero(); dh.batch * dh.channels];
                for c in 0..dh.channels {
                    for n in 0..dh.batch {
                        dshift[n * dh.channels + c] = dh.plane(c, n).iter().copied().sum();
                    }
                }
                Some(proj.backward(time, &dshift, dh.batch))
            }
            _ => None,
        };
        let da = self.conv1.backward(&cache.conv1, &dh);
        let dh1 = silu_tensor_backward(&cache.pre1, &da);
        let mut dx = self.norm1.backward(&cache.norm1, &dh1);
        match (&mut self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => dx.add_assign(&conv.backward(sc, dout)),
            _ => dx.add_assign(dout),
        }
        (dx, dtime)
    }
}

impl<T: Real> Module<T> for ResBlock<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.norm1.params(&format!("{prefix}.norm1"), out);
        self.conv1.params(&format!("{prefix}.conv1"), out);
        if let Some(p) = &self.time_proj {
            p.params(&format!("{prefix}.time_proj"), out);
        }
        self.norm2.params(&format!("{prefix}.norm2"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        if let Some(s) = &self.skip {
            s.params(&format!("{prefix}.skip"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.norm1.params_mut(out);
        self.conv1.params_mut(out);
        if let Some(p) = &mut self.time_proj {
            p.params_mut(out);
        }
        self.norm2.params_mut(out);
        self.conv2.params_mut(out);
        if let Some(s) = &mut self.skip {
            s.params_mut(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Diffused bands + high-band condition + full degraded spectrum.
    pub in_channels: usize,
    /// Diffused bands.
    pub out_channels: usize,
    pub width: usize,
    /// Adds a 1×1 projection of the raw input to the output.
    pub input_skip: bool,
    #[serde(default)]
    pub precondition: Option<Precondition>,
}

/// Output mixing `ε = c_skip(t)·(x_t − √ᾱ_t·μ) + c_out(t)·F(x, t)`.
///
/// The coefficients are the least-squares linear estimate of ε from `x_t` and
/// its residual scale, for clean data spread `sigma_data` around a prior mean
/// `μ`. The trunk `F` then has a unit-scale target at every noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precondition {
    pub sigma_data: f64,
    pub schedule: ScheduleParams,
    /// Takes `μ` from the degraded bands of the conditioning spectrum
    /// (input channels `in/2 .. in/2 + out`); otherwise `μ = 0`.
    #[serde(default)]
    pub center_on_condition: bool,
}

/// `(c_skip, c_out)` for a given `ᾱ_t`.
pub fn output_coefficients(alpha_bar: f64, sigma_data: f64) -> (f64, f64) {
    let signal = alpha_bar * sigma_data * sigma_data;
    let noise = 1.0 - alpha_bar;
    let total = signal + noise;
    (noise.sqrt() / total, signal.sqrt() / total.sqrt())
}

/// Three-scale residual encoder–decoder with sinusoidal time conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimatorNet<T> {
    pub config: EstimatorConfig,
    pub time_in: Linear<T>,
    pub time_out: Linear<T>,
    pub stem: Conv2d<T>,
    pub enc0: ResBlock<T>,
    pub enc1: ResBlock<T>,
    pub mid: ResBlock<T>,
    pub dec1: ResBlock<T>,
    pub dec0: ResBlock<T>,
    pub head_norm: GroupNorm<T>,
    pub head: Conv2d<T>,
    pub input_skip: Option<Conv2d<T>>,
    /// `ᾱ_t` for `t = 0..=T`, present with preconditioning.
    alpha_bars: Option<Vec<f64>>,
}

pub struct EstimatorCache<T> {
    steps: Vec<usize>,
    emb: Vec<T>,
    time_hidden_pre: Vec<T>,
    time_hidden: Vec<T>,
    time_pre: Vec<T>,
    time_act: Vec<T>,
    stem: ConvCache<T>,
    enc0: ResBlockCache<T>,
    enc1: ResBlockCache<T>,
    mid: ResBlockCache<T>,
    dec1: ResBlockCache<T>,
    dec0: ResBlockCache<T>,
    s0_channels: usize,
    s1_channels: usize,
    head_norm: NormCache<T>,
    head_pre: Tensor<T>,
    head: ConvCache<T>,
    input_skip: Option<ConvCache<T>>,
    out_scale: Option<Vec<T>>,
}

impl<T: Real> NoiseEstimatorNet<T> {
    pub fn new<R: Rng + ?Sized>(config: EstimatorConfig, rng: &mut R) -> Self {
        let w = config.width;
        let td = 4 * w;
        Self {
            config,
            time_in: Linear::new(w, td, rng),
            time_out: Linear::new(td, td, rng),
            stem: Conv2d::new(config.in_channels, w, 3, rng),
            enc0: ResBlock::new(w, w, Some(td), rng),
            enc1: ResBlock::new(w, 2 * w, Some(td), rng),
            mid: ResBlock::new(2 * w, 2 * w, Some(td), rng),
            dec1: ResBlock::new(4 * w, 2 * w, Some(td), rng),
            dec0: ResBlock::new(3 * w, w, Some(td), rng),
            head_norm: GroupNorm::new(w),
            head: Conv2d::new(w, config.out_channels, 3, rng).scaled(0.1),
            input_skip: config
                .input_skip
                .then(|| Conv2d::new(config.in_channels, config.out_channels, 1, rng).scaled(0.0)),
            alpha_bars: config.precondition.map(|p| {
                let sched = p.schedule.build().expect("preconditioning schedule must be valid");
                (0..=sched.steps()).map(|t| sched.alpha_bar(t)).collect()
            }),
        }
    }

    /// `(c_skip, c_out)` at timestep `t`; `(0, 1)` without preconditioning.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        match (&self.alpha_bars, self.config.precondition) {
            (Some(ab), Some(p)) => output_coefficients(ab[t], p.sigma_data),
            _ => (0.0, 1.0),
        }
    }

    /// Spatial dims must be multiples of this.
    pub const SPATIAL_MULTIPLE: usize = 4;

    pub fn check_input(&self, x: &Tensor<T>, steps: &[usize]) -> Result<()> {
        if x.channels != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "estimator expects {} input channels, got {}",
                self.config.in_channels, x.channels
            )));
        }
        if x.height % Self::SPATIAL_MULTIPLE != 0 || x.width % Self::SPATIAL_MULTIPLE != 0 {
            return Err(Error::ShapeMismatch(format!(
                "estimator input {}x{} is not a multiple of {}",
                x.height,
                x.width,
                Self::SPATIAL_MULTIPLE
            )));
        }
        if let Some(ab) = &self.alpha_bars {
            if let Some(&t) = steps.iter().find(|&&t| t == 0 || t >= ab.len()) {
                return Err(Error::TimestepOutOfRange {
                    t,
                    lo: 1,
                    hi: ab.len() - 1,
                });
            }
        }
        if steps.len() != x.batch {
            return Err(Error::ShapeMismatch(format!(
                "{} timesteps for a batch of {}",
                steps.len(),
                x.batch
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>, steps: &[usize]) -> Result<Tensor<T>> {
        Ok(self.forward_train(x, steps)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>, steps: &[usize]) -> Result<(Tensor<T>, EstimatorCache<T>)> {
        self.check_input(x, steps)?;
        let n = x.batch;
        let emb = timestep_embedding::<T>(steps, self.config.width);
        let time_hidden_pre = self.time_in.forward(&emb, n);
        let time_hidden = silu(&time_hidden_pre);
        let time_pre = self.time_out.forward(&time_hidden, n);
        let time_act = silu(&time_pre);
        let t = Some(time_act.as_slice());

        let (h, stem) = self.stem.forward(x);
        let (s0, enc0) = self.enc0.forward(&h, t);
        let (s1, enc1) = self.enc1.forward(&avg_pool2(&s0), t);
        let (m, mid) = self.mid.forward(&avg_pool2(&s1), t);
        let (d1, dec1) = self.dec1.forward(&Tensor::concat(&[&upsample2(&m), &s1]), t);
        let (d0, dec0) = self.dec0.forward(&Tensor::concat(&[&upsample2(&d1), &s0]), t);
        let (hn, head_norm) = self.head_norm.forward(&d0);
        let (mut out, head) = self.head.forward(&silu_tensor(&hn));
        let input_skip = self.input_skip.as_ref().map(|conv| {
            let (s, cache) = conv.forward(x);
            out.add_assign(&s);
            cache
        });
        let out_scale = self.alpha_bars.is_some().then(|| {
            let mut scales = Vec::with_capacity(n);
            let centered = self.config.precondition.is_some_and(|p| p.center_on_condition);
            let mu_from = x.channels / 2;
            for (b, &step) in steps.iter().enumerate() {
                let (c_skip, c_out) = self.coefficients(step);
                let root_ab = self.alpha_bars.as_ref().map_or(0.0, |ab| ab[step].sqrt());
                let (c_skip, c_out, root_ab): (T, T, T) = (real(c_skip), real(c_out), real(root_ab));
                for c in 0..out.channels {
                    let xt = x.plane(c, b);
                    let mu = centered.then(|| x.plane(mu_from + c, b));
                    for (i, o) in out.plane_mut(c, b).iter_mut().enumerate() {
                        let shift = mu.map_or(T::zero(), |m| root_ab * m[i]);
                        *o = c_skip * (xt[i] - shift) + c_out * *o;
                    }
                }
                scales.push(c_out);
            }
            scales
        });
        Ok((
            out,
            EstimatorCache {
                steps: steps.to_vec(),
                emb,
                time_hidden_pre,
                time_hidden,
                time_pre,
                time_act,
                stem,
                enc0,
                enc1,
                mid,
                dec1,
                dec0,
                s0_channels: s0.channels,
                s1_channels: s1.channels,
                head_norm,
                head_pre: hn,
                head,
                input_skip,
                out_scale,
            },
        ))
    }

    /// Accumulates parameter gradients for `dout = ∂L/∂output`.
    pub fn backward(&mut self, cache: &EstimatorCache<T>, dout: &Tensor<T>) {
        let n = cache.steps.len();
        let t = Some(cache.time_act.as_slice());
        let mut dtime = vec![T::zero(); cache.time_act.len()];
        let mut add_time = |d: Option<Vec<T>>| {
            if let Some(d) = d {
                dtime.iter_mut().zip(d).for_each(|(a, b)| *a = *a + b);
            }
        };

        let scaled;
        let dout = match &cache.out_scale {
            Some(scales) => {
                let mut d = dout.clone();
                for (b, &s) in scales.iter().enumerate() {
                    for c in 0..d.channels {
                        d.plane_mut(c, b).iter_mut().for_each(|v| *v = *v * s);
                    }
                }
                scaled = d;
                &scaled
            }
            None => dout,
        };
        if let (Some(conv), Some(c)) = (&mut self.input_skip, &cache.input_skip) {
            // input gradient is not needed
            let _ = conv.backward(c, dout);
        }
        let da = self.head.backward(&cache.head, dout);
        let dhn = silu_tensor_backward(&cache.head_pre, &da);
        let dd0 = self.head_norm.backward(&cache.head_norm, &dhn);

        let (dcat0, dt) = self.dec0.backward(&cache.dec0, &dd0, t);
        add_time(dt);
        let (dup1, mut ds0) = dcat0.split(dcat0.channels - cache.s0_channels);
        let dd1 = upsample2_backward(&dup1);

        let (dcat1, dt) = self.dec1.backward(&cache.dec1, &dd1, t);
        add_time(dt);
        let (dupm, mut ds1) = dcat1.split(dcat1.channels - cache.s1_channels);
        let dm = upsample2_backward(&dupm);

        let (dp1, dt) = self.mid.backward(&cache.mid, &dm, t);
        add_time(dt);
        ds1.add_assign(&avg_pool2_backward(&dp1));

        let (dp0, dt) = self.enc1.backward(&cache.enc1, &ds1, t);
        add_time(dt);
        ds0.add_assign(&avg_pool2_backward(&dp0));

        let (dh, dt) = self.enc0.backward(&cache.enc0, &ds0, t);
        add_time(dt);
        let _ = self.stem.backward(&cache.stem, &dh);

        let dpre = silu_backward(&cache.time_pre, &dtime);
        let dhidden = self.time_out.backward(&cache.time_hidden, &dpre, n);
        let dhidden_pre = silu_backward(&cache.time_hidden_pre, &dhidden);
        let _ = self.time_in.backward(&cache.emb, &dhidden_pre, n);
    }
}

impl<T: Real> Module<T> for NoiseEstimatorNet<T> {
    fn params<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.time_in.params("time_in", out);
        self.time_out.params("time_out", out);
        self.stem.params("stem", out);
        self.enc0.params("enc0", out);
        self.enc1.params("enc1", out);
        self.mid.params("mid", out);
        self.dec1.params("dec1", out);
        self.dec0.params("dec0", out);
        self.head_norm.params("head_norm", out);
        self.head.params("head", out);
        if let Some(s) = &self.input_skip {
            s.params("input_skip", out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.time_in.params_mut(out);
        self.time_out.params_mut(out);
        self.stem.params_mut(out);
        self.enc0.params_mut(out);
        self.enc1.params_mut(out);
        self.mid.params_mut(out);
        self.dec1.params_mut(out);
        self.dec0.params_mut(out);
        self.head_norm.params_mut(out);
        self.head.params_mut(out);
        if let Some(s) = &mut self.input_skip {
            s.params_mut(out);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HfrmConfig {
    /// Degraded spectrum bands.
    pub in_channels: usize,
    /// Estimated high bands.
    pub out_channels: usize,
    pub width: usize,
    pub blocks: usize,
    /// First input channel of the degraded high bands added back to the output, if any.
    pub residual_from: Option<usize>,
}

/// Time-independent residual stack mapping the degraded spectrum to clean high bands.
#[derive(Debug, Clone, PartialEq)]
pub struct HfrmNet<T> {
    pub config: HfrmConfig,
    pub stem: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub head_norm: GroupNorm<T>,
    pub head: Conv2d<T>,
}

pub struct HfrmCache<T> {
    stem: ConvCache<T>,
    blocks: Vec<ResBlockCache<T>>,
    head_norm: NormCache<T>,
    head_pre: Tensor<T>,
    head: ConvCache<T>,
}

impl<T: Real> HfrmNet<T> {
    pub fn new<R: Rng + ?Sized>(config: HfrmConfig, rng: &mut R) -> Self {
        let w = config.width;
        Self {
            config,
            stem: Conv2d::new(config.in_channels, w, 3, rng),
            blocks: (0..config.blocks).map(|_| ResBlock::new(w, w, None, rng)).collect(),
            head_norm: GroupNorm::new(w),
            head: Conv2d::new(w, config.out_channels, 3, rng).scaled(0.1),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, HfrmCache<T>)> {
        if x.channels != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "refinement network expects {} input channels, got {}",
                self.config.in_channels, x.channels
            )));
        }
        let (mut h, stem) = self.stem.forward(x);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(&h, None);
            blocks.push(cache);
            h = next;
        }
        let (hn, head_norm) = self.head_norm.forward(&h);
        let (mut out, head) = self.head.forward(&silu_tensor(&hn));
        if let Some(from) = self.config.residual_from {
            let cl = x.channel_len();
            let src = &x.data[from * cl..(from + self.config.out_channels) * cl];
            out.data.iter_mut().zip(src).for_each(|(o, &s)| *o = *o + s);
        }
        Ok((
            out,
            HfrmCache {
                stem,
                blocks,
                head_norm,
                head_pre: hn,
                head,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HfrmCache<T>, dout: &Tensor<T>) {
        let da = self.head.backward(&cache.head, dout);
        let dhn = silu_tensor_backward(&cache.head_pre, &da);
        let mut dh = self.head_norm.backward(&cache.head_norm, &dhn);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dh = b.backward(c, &dh, None).0;
        }
        let _ = self.stem.backward(&cache.stem, &dh);
    }
}

impl<T: Real> Module<T> for HfrmNet<T> {
    fn params<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        self.stem.params("stem", out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("block{i}"), out);
        }
        self.head_norm.params("head_norm", out);
        self.head.params("head", out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        self.stem.params_mut(out);
        for b in &mut self.blocks {
            b.params_mut(out);
        }
        self.head_norm.params_mut(out);
        self.head.params_mut(out);
    }
}
