//! Training loops for the refinement network and the noise estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapter::refine_high;
use super::checkpoint::{BandConfig, Checkpoint};
use super::layers::Module;
use super::nets::{HfrmNet, NoiseEstimatorNet};
use super::optim::{Ema, Optimizer, OptimizerKind};
use super::tensor::Tensor;
use crate::diffusion::{forward_sample, hfrm_loss, simple_loss, NoiseDraw};
use crate::error::{Error, Result};
use crate::planes::Planes;
use crate::schedule::{NoiseSchedule, ScheduleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub ema_decay: Option<f64>,
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub gamma: f64,
    /// Free-form reference to the training data, e.g. a manifest path.
    pub dataset: String,
    /// Trains the estimator at this single timestep instead of uniform draws.
    #[serde(default)]
    pub fixed_timestep: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 8,
            learning_rate: 2e-4,
            optimizer: OptimizerKind::Adam,
            ema_decay: None,
            seed: 0,
            schedule: ScheduleParams::default(),
            gamma: crate::wavelet::default_gamma(2),
            dataset: String::new(),
            fixed_timestep: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) || d == 0.0 {
                return bad("EMA decay must lie in (0, 1)");
            }
        }
        if let Some(t) = self.fixed_timestep {
            if t == 0 || t > self.schedule.steps {
                return bad("fixed timestep must lie in [1, T]");
            }
        }
        Ok(())
    }
}

/// A degraded spectrum and its clean counterpart, both γ-scaled with all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPair {
    pub degraded: Planes<f64>,
    pub clean: Planes<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

fn check_pairs(data: &[SpectrumPair]) -> Result<(usize, usize, usize)> {
    let first = data.first().ok_or(Error::EmptyDataset)?;
    let shape = first.degraded.shape();
    for (i, p) in data.iter().enumerate() {
        if p.degraded.shape() != shape || p.clean.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "training pair {i} has shapes {:?}/{:?}, expected {shape:?}",
                p.degraded.shape(),
                p.clean.shape()
            )));
        }
    }
    Ok(shape)
}

fn draw_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

fn finite_loss(loss: f64, what: &str, iteration: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("{what} loss at iteration {iteration} is {loss}")))
    }
}

fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data.iter().map(|&v| v as f64).collect()
}

struct Stepper {
    opt: Optimizer<f32>,
    ema: Option<Ema<f32>>,
}

impl Stepper {
    fn new<M: Module<f32>>(cfg: &TrainConfig, model: &M) -> Self {
        Self {
            opt: Optimizer::new(cfg.optimizer, cfg.learning_rate),
            ema: cfg.ema_decay.map(|d| Ema::new(d, model)),
        }
    }

    fn step<M: Module<f32>>(&mut self, model: &mut M) {
        self.opt.step(model);
        if let Some(e) = &mut self.ema {
            e.update(model);
        }
    }

    fn finish<M: Module<f32>>(&self, model: &mut M) {
        if let Some(e) = &self.ema {
            e.copy_to(model);
        }
    }
}

/// Fits the refinement network to the clean high bands under a mean L1 loss.
pub fn train_hfrm(
    net: &mut HfrmNet<f32>,
    data: &[SpectrumPair],
    bands: BandConfig,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    train_hfrm_with(net, data, bands, cfg, &mut |_, _| {})
}

/// As [`train_hfrm`], calling `progress(iteration, loss)` after every update.
pub fn train_hfrm_with(
    net: &mut HfrmNet<f32>,
    data: &[SpectrumPair],
    bands: BandConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainRun> {
    cfg.validate()?;
    let (total, _, _) = check_pairs(data)?;
    let n_low = bands.n_low;
    if net.config.in_channels != total || net.config.out_channels + n_low != total {
        return Err(Error::ShapeMismatch(format!(
            "refinement network maps {} → {} bands, data has {total} bands with {n_low} diffused",
            net.config.in_channels, net.config.out_channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(cfg, net);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = draw_batch(&mut rng, data.len(), cfg.batch_size);
        let inputs: Vec<Planes<f32>> = idx.iter().map(|&i| data[i].degraded.cast()).collect();
        let targets: Vec<Planes<f32>> = idx
            .iter()
            .map(|&i| data[i].clean.slice_channels(n_low..total).cast())
            .collect();
        let x = Tensor::from_planes(&inputs)?;
        let target = Tensor::from_planes(&targets)?;
        let (out, cache) = net.forward_train(&x)?;
        let loss = finite_loss(hfrm_loss(&to_f64(&out), &to_f64(&target))?, "refinement", it)?;
        let scale = 1.0 / out.data.len() as f32;
        let mut dout = out.clone();
        dout.data
            .iter_mut()
            .zip(&target.data)
            .for_each(|(o, &t)| *o = if *o > t { scale } else if *o < t { -scale } else { 0.0 });
        net.backward(&cache, &dout);
        stepper.step(net);
        losses.push(loss);
        progress(it, loss);
    }
    stepper.finish(net);
    Ok(TrainRun {
        checkpoint: Checkpoint::from_hfrm(net, bands, cfg.schedule, cfg.clone(), cfg.iterations as u64),
        losses,
    })
}

/// Trains the estimator on `L_simple` with the refinement network frozen.
///
/// `hfrm` must be `None` exactly when every band is diffused.
pub fn train_diffusion(
    net: &mut NoiseEstimatorNet<f32>,
    hfrm: Option<&Checkpoint>,
    data: &[SpectrumPair],
    sched: &NoiseSchedule,
    bands: BandConfig,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    train_diffusion_with(net, hfrm, data, sched, bands, cfg, &mut |_, _| {})
}

/// As [`train_diffusion`], calling `progress(iteration, loss)` after every update.
pub fn train_diffusion_with(
    net: &mut NoiseEstimatorNet<f32>,
    hfrm: Option<&Checkpoint>,
    data: &[SpectrumPair],
    sched: &NoiseSchedule,
    bands: BandConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainRun> {
    cfg.validate()?;
    if cfg.schedule != sched.params() {
        return Err(Error::Checkpoint(format!(
            "train config schedule {:?} differs from the sampling schedule {:?}",
            cfg.schedule,
            sched.params()
        )));
    }
    let (total, _, _) = check_pairs(data)?;
    let n_low = bands.n_low;
    if net.config.in_channels != 2 * total || net.config.out_channels != n_low {
        return Err(Error::ShapeMismatch(format!(
            "estimator maps {} → {} channels, data needs {} → {n_low}",
            net.config.in_channels,
            net.config.out_channels,
            2 * total
        )));
    }
    let degraded: Vec<Planes<f64>> = data.iter().map(|p| p.degraded.clone()).collect();
    let cond_high: Vec<Planes<f64>> = match hfrm {
        Some(ckpt) => {
            let m = &ckpt.manifest;
            if m.schedule != sched.params() {
                return Err(Error::Checkpoint(format!(
                    "refinement checkpoint schedule {:?} differs from {:?}",
                    m.schedule,
                    sched.params()
                )));
            }
            if m.bands != bands {
                return Err(Error::Checkpoint(format!(
                    "refinement checkpoint bands {:?} differ from {:?}",
                    m.bands, bands
                )));
            }
            refine_high(&ckpt.hfrm()?, &degraded, 16)?
        }
        None if n_low == total => {
            let (_, h, w) = data[0].degraded.shape();
            vec![Planes::zeros(0, h, w); data.len()]
        }
        None => {
            return Err(Error::InvalidArgument(format!(
                "{} high bands need a refinement checkpoint",
                total - n_low
            )))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(cfg, net);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = draw_batch(&mut rng, data.len(), cfg.batch_size);
        let mut inputs = Vec::with_capacity(idx.len());
        let mut noises = Vec::with_capacity(idx.len());
        let mut steps = Vec::with_capacity(idx.len());
        for &i in &idx {
            let t = cfg
                .fixed_timestep
                .unwrap_or_else(|| rng.random_range(1..=sched.steps()));
            let x0 = data[i].clean.slice_channels(0..n_low);
            let eps = NoiseDraw::sample(&mut rng, x0.shape(), it as u64);
            let x_t = forward_sample(&x0, t, &eps, sched)?;
            inputs.push(Planes::concat(&[&x_t, &cond_high[i], &degraded[i]])?.cast::<f32>());
            noises.push(eps.values.cast::<f32>());
            steps.push(t);
        }
        let x = Tensor::from_planes(&inputs)?;
        let target = Tensor::from_planes(&noises)?;
        let (out, cache) = net.forward_train(&x, &steps)?;
        let loss = finite_loss(simple_loss(&to_f64(&out), &to_f64(&target))?, "diffusion", it)?;
        let scale = 2.0 / out.data.len() as f32;
        let mut dout = out.clone();
        dout.data
            .iter_mut()
            .zip(&target.data)
            .for_each(|(o, &t)| *o = (*o - t) * scale);
        net.backward(&cache, &dout);
        stepper.step(net);
        losses.push(loss);
        progress(it, loss);
    }
    stepper.finish(net);
    Ok(TrainRun {
        checkpoint: Checkpoint::from_estimator(net, bands, sched.params(), cfg.clone(), cfg.iterations as u64),
        losses,
    })
}
