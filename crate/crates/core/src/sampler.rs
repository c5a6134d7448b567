//! Reverse-process samplers over an abstract noise estimator.
//!
//! All three procedures start from `x_T ~ N(0, I)` shaped like the diffused
//! low bands. Conditioning tensors are passed through to the estimator
//! untouched.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::diffusion::NoiseDraw;
use crate::error::{Error, Result};
use crate::planes::Planes;
use crate::schedule::{NoiseSchedule, SamplingMode, SamplingPlan};

/// `ε_θ(x_t, cond_high, cond_spectrum, t)`.
pub trait NoiseEstimator {
    fn estimate(
        &mut self,
        x_t: &Planes<f64>,
        cond_high: &Planes<f64>,
        cond_spectrum: &Planes<f64>,
        t: usize,
    ) -> Result<Planes<f64>>;
}

impl<E: NoiseEstimator + ?Sized> NoiseEstimator for &mut E {
    fn estimate(
        &mut self,
        x_t: &Planes<f64>,
        cond_high: &Planes<f64>,
        cond_spectrum: &Planes<f64>,
        t: usize,
    ) -> Result<Planes<f64>> {
        (**self).estimate(x_t, cond_high, cond_spectrum, t)
    }
}

/// Wraps an estimator and counts its invocations.
#[derive(Debug)]
pub struct CountingEstimator<E> {
    pub inner: E,
    pub calls: usize,
}

impl<E> CountingEstimator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, calls: 0 }
    }
}

impl<E: NoiseEstimator> NoiseEstimator for CountingEstimator<E> {
    fn estimate(
        &mut self,
        x_t: &Planes<f64>,
        cond_high: &Planes<f64>,
        cond_spectrum: &Planes<f64>,
        t: usize,
    ) -> Result<Planes<f64>> {
        self.calls += 1;
        self.inner.estimate(x_t, cond_high, cond_spectrum, t)
    }
}

/// Returns the noise that actually separates `x_t` from a known `x_0`:
/// `(x_t − √ᾱ_t·x_0) / √(1 − ᾱ_t)`. A perfect estimator, used as a test oracle.
#[derive(Debug, Clone)]
pub struct OracleEstimator {
    pub x0: Planes<f64>,
    pub schedule: NoiseSchedule,
}

impl NoiseEstimator for OracleEstimator {
    fn estimate(
        &mut self,
        x_t: &Planes<f64>,
        _cond_high: &Planes<f64>,
        _cond_spectrum: &Planes<f64>,
        t: usize,
    ) -> Result<Planes<f64>> {
        self.schedule.check_step(t)?;
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(&self.x0, |x, x0| (x - a * x0) / b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub mean_abs: f64,
    pub snapshot: Option<Planes<f64>>,
}

/// Per-step record of a sampling run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerTrace {
    pub steps: Vec<TraceStep>,
    pub eval_count: usize,
    keep_snapshots: bool,
}

impl SamplerTrace {
    pub fn new(keep_snapshots: bool) -> Self {
        Self {
            keep_snapshots,
            ..Self::default()
        }
    }

    fn record(&mut self, t: usize, x: &Planes<f64>) {
        self.steps.push(TraceStep {
            t,
            mean_abs: x.mean_abs(),
            snapshot: self.keep_snapshots.then(|| x.clone()),
        });
    }

    /// CSV with header `step,t,mean_abs`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,t,mean_abs\n");
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{i},{},{:.9}\n", s.t, s.mean_abs));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Algebraic inversion of the closed-form forward process: `(x_t − √(1 − ᾱ_t)·ε) / √ᾱ_t`.
pub fn predict_x0(
    x_t: &Planes<f64>,
    eps_pred: &Planes<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_pred, |x, e| (x - b * e) / a)
}

/// One ancestral step `x_{t−1} = (x_t − β_t/√(1 − ᾱ_t)·ε) / √α_t + σ̃_t·z`; `z` is ignored at `t = 1`.
pub fn ddpm_ancestral_step(
    x_t: &Planes<f64>,
    eps_pred: &Planes<f64>,
    t: usize,
    z: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    sched.check_step(t)?;
    let (alpha, beta, ab) = (sched.alpha(t), sched.beta(t), sched.alpha_bar(t));
    let coef = beta / (1.0 - ab).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let mean = x_t.zip_map(eps_pred, |x, e| inv * (x - coef * e))?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = sched.posterior_sigma2(t).sqrt();
    mean.zip_map(&z.values, |m, n| m + sigma * n)
}

/// Member of the non-Markovian family with reverse standard deviation `sigma`:
/// `√ᾱ_prev·x̂_0 + √(1 − ᾱ_prev − σ²)·ε + σ·z`.
pub fn generalized_step(
    x_t: &Planes<f64>,
    eps_pred: &Planes<f64>,
    t: usize,
    t_prev: usize,
    sigma: f64,
    z: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    check_order(t, t_prev, sched)?;
    let x0 = predict_x0(x_t, eps_pred, t, sched)?;
    let ab_prev = sched.alpha_bar(t_prev);
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let a = ab_prev.sqrt();
    let partial = x0.zip_map(eps_pred, |x, e| a * x + dir * e)?;
    partial.zip_map(&z.values, |p, n| p + sigma * n)
}

fn check_order(t: usize, t_prev: usize, sched: &NoiseSchedule) -> Result<()> {
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "reverse step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    Ok(())
}

/// Deterministic implicit step: `√ᾱ_prev·x̂_0 + √(1 − ᾱ_prev)·ε`.
pub fn ddim_step(
    x_t: &Planes<f64>,
    eps_pred: &Planes<f64>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    check_order(t, t_prev, sched)?;
    let x0 = predict_x0(x_t, eps_pred, t, sched)?;
    let ab_prev = sched.alpha_bar(t_prev);
    let (a, b) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x0.zip_map(eps_pred, |x, e| a * x + b * e)
}

fn low_shape(cond_high: &Planes<f64>, cond_spectrum: &Planes<f64>) -> Result<(usize, usize, usize)> {
    let (c, h, w) = cond_spectrum.shape();
    if cond_high.channels() >= c || (cond_high.channels() > 0 && (cond_high.height(), cond_high.width()) != (h, w)) {
        return Err(Error::ShapeMismatch(format!(
            "high-band condition {:?} does not fit spectrum {:?}",
            cond_high.shape(),
            cond_spectrum.shape()
        )));
    }
    Ok((c - cond_high.channels(), h, w))
}

fn call<E: NoiseEstimator + ?Sized>(
    est: &mut E,
    x: &Planes<f64>,
    cond_high: &Planes<f64>,
    cond_spectrum: &Planes<f64>,
    t: usize,
    trace: &mut SamplerTrace,
) -> Result<Planes<f64>> {
    let eps = est.estimate(x, cond_high, cond_spectrum, t)?;
    trace.eval_count += 1;
    if !eps.same_shape(x) {
        return Err(Error::ShapeMismatch(format!(
            "estimator returned {:?} for input {:?}",
            eps.shape(),
            x.shape()
        )));
    }
    Ok(eps)
}

fn check_mode(plan: &SamplingPlan, mode: SamplingMode) -> Result<()> {
    if plan.mode != mode {
        return Err(Error::InvalidArgument(format!(
            "{} sampler given a {} plan",
            mode, plan.mode
        )));
    }
    Ok(())
}

/// Deterministic implicit sampling along the plan's sub-sequence down to `t = 0`.
pub fn ddim_sample<E, R>(
    est: &mut E,
    cond_high: &Planes<f64>,
    cond_spectrum: &Planes<f64>,
    plan: &SamplingPlan,
    sched: &NoiseSchedule,
    rng: &mut R,
    trace: &mut SamplerTrace,
) -> Result<Planes<f64>>
where
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    check_mode(plan, SamplingMode::Ddim)?;
    let shape = low_shape(cond_high, cond_spectrum)?;
    let mut x = NoiseDraw::sample(rng, shape, 0).values;
    trace.record(plan.timestamps[0], &x);
    for pair in plan.timestamps.windows(2) {
        let (t, t_prev) = (pair[0], pair[1]);
        let eps = call(est, &x, cond_high, cond_spectrum, t, trace)?;
        x = ddim_step(&x, &eps, t, t_prev, sched)?;
        trace.record(t_prev, &x);
    }
    Ok(x)
}

/// Deterministic implicit steps from `T` to `M`, then `x̂_0` predicted from `x_M`.
/// Issues exactly `plan.evals` estimator calls.
pub fn ecs_sample<E, R>(
    est: &mut E,
    cond_high: &Planes<f64>,
    cond_spectrum: &Planes<f64>,
    plan: &SamplingPlan,
    sched: &NoiseSchedule,
    rng: &mut R,
    trace: &mut SamplerTrace,
) -> Result<Planes<f64>>
where
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    check_mode(plan, SamplingMode::Ecs)?;
    let shape = low_shape(cond_high, cond_spectrum)?;
    let mut x = NoiseDraw::sample(rng, shape, 0).values;
    trace.record(plan.timestamps[0], &x);
    let last = plan.timestamps.len() - 1;
    for (i, &t) in plan.timestamps.iter().enumerate() {
        let eps = call(est, &x, cond_high, cond_spectrum, t, trace)?;
        if i == last {
            x = predict_x0(&x, &eps, t, sched)?;
            trace.record(0, &x);
        } else {
            let t_prev = plan.timestamps[i + 1];
            x = ddim_step(&x, &eps, t, t_prev, sched)?;
            trace.record(t_prev, &x);
        }
    }
    Ok(x)
}

/// Full ancestral sampling, `T` estimator calls.
pub fn ddpm_sample<E, R>(
    est: &mut E,
    cond_high: &Planes<f64>,
    cond_spectrum: &Planes<f64>,
    sched: &NoiseSchedule,
    rng: &mut R,
    trace: &mut SamplerTrace,
) -> Result<Planes<f64>>
where
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    let shape = low_shape(cond_high, cond_spectrum)?;
    let mut x = NoiseDraw::sample(rng, shape, 0).values;
    trace.record(sched.steps(), &x);
    for t in (1..=sched.steps()).rev() {
        let eps = call(est, &x, cond_high, cond_spectrum, t, trace)?;
        let z = NoiseDraw::sample(rng, shape, t as u64);
        x = ddpm_ancestral_step(&x, &eps, t, &z, sched)?;
        trace.record(t - 1, &x);
    }
    Ok(x)
}

/// Dispatches on `plan.mode`.
pub fn sample<E, R>(
    est: &mut E,
    cond_high: &Planes<f64>,
    cond_spectrum: &Planes<f64>,
    plan: &SamplingPlan,
    sched: &NoiseSchedule,
    rng: &mut R,
    trace: &mut SamplerTrace,
) -> Result<Planes<f64>>
where
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    match plan.mode {
        SamplingMode::Ecs => ecs_sample(est, cond_high, cond_spectrum, plan, sched, rng, trace),
        SamplingMode::Ddim => ddim_sample(est, cond_high, cond_spectrum, plan, sched, rng, trace),
        SamplingMode::Ddpm => ddpm_sample(est, cond_high, cond_spectrum, sched, rng, trace),
    }
}
