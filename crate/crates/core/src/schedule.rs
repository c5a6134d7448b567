//! Noise schedules and the timestep sequences the samplers walk.
//!
//! Tables are indexed by `t ∈ 1..=T`; `t = 0` is the clean state, for which
//! `alpha_bar(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Parameters that fully determine a [`NoiseSchedule`]; this is what checkpoints embed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_sigma2: Vec<f64>,
}

/// Linear β schedule with both endpoints included.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (steps - 1) as f64;
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect()
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let posterior_sigma2 = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule {
        params: ScheduleParams {
            steps,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
        posterior_sigma2,
    })
}

impl NoiseSchedule {
    /// Arbitrary β table, for hand-evaluated checks.
    #[cfg(test)]
    pub(crate) fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |p, a| {
                *p *= a;
                Some(*p)
            })
            .collect();
        let posterior_sigma2 = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        Self {
            params: ScheduleParams {
                steps: beta.len(),
                beta_start: beta[0],
                beta_end: beta[beta.len() - 1],
            },
            beta,
            alpha,
            alpha_bar,
            posterior_sigma2,
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_linear_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    /// β_t for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance of the Markovian reverse step, `(1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    pub fn posterior_sigma2(&self, t: usize) -> f64 {
        self.posterior_sigma2[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// DDIM sub-sequence `τ_i = (i − 1)·T/S` for `i = 1..=S`, ascending.
pub fn ddim_subsequence(steps: usize, sub_steps: usize) -> Result<Vec<usize>> {
    if sub_steps == 0 || steps == 0 || steps % sub_steps != 0 {
        return Err(Error::InvalidArgument(format!(
            "sub-sequence length {sub_steps} must divide T = {steps}"
        )));
    }
    let stride = steps / sub_steps;
    Ok((0..sub_steps).map(|i| i * stride).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Full ancestral chain `T, T−1, …, 1`.
    Ddpm,
    /// Deterministic implicit steps along `T, τ_S, …, τ_1 = 0`.
    Ddim,
    /// Deterministic implicit steps from `T` down to `M`, then a direct
    /// clean-signal prediction at `M`.
    Ecs,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            "ecs" => Ok(Self::Ecs),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ddpm => "ddpm",
            Self::Ddim => "ddim",
            Self::Ecs => "ecs",
        })
    }
}

/// A reverse-process itinerary.
///
/// `timestamps` is descending. For DDIM and DDPM it ends at 0 and the
/// estimator runs at every entry but the last; for ECS it ends at `M` and the
/// estimator runs at every entry, the last call producing the clean estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    pub total_steps: usize,
    pub stride: usize,
    pub evals: usize,
    pub stop_index: usize,
    pub mode: SamplingMode,
    pub timestamps: Vec<usize>,
}

/// `T, T − stride, …, M` with `M = T − (evals − 1)·stride`.
pub fn make_ecs_plan(steps: usize, stride: usize, evals: usize) -> Result<SamplingPlan> {
    if stride == 0 || steps % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} must divide T = {steps}"
        )));
    }
    if evals == 0 {
        return Err(Error::InvalidArgument("evals must be at least 1".into()));
    }
    let span = (evals - 1) * stride;
    if span >= steps {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} with {evals} evaluations reaches t = 0; use DDIM mode for a full run"
        )));
    }
    let stop = steps - span;
    Ok(SamplingPlan {
        total_steps: steps,
        stride,
        evals,
        stop_index: stop,
        mode: SamplingMode::Ecs,
        timestamps: (0..evals).map(|i| steps - i * stride).collect(),
    })
}

/// `T, τ_S, …, τ_1 = 0` for `S = sub_steps`; performs `S` evaluations.
pub fn make_ddim_plan(steps: usize, sub_steps: usize) -> Result<SamplingPlan> {
    let taus = ddim_subsequence(steps, sub_steps)?;
    // τ_S = T − T/S, so the descending list is T, T − s, …, 0
    let mut timestamps = vec![steps];
    timestamps.extend(taus.iter().rev());
    Ok(SamplingPlan {
        total_steps: steps,
        stride: steps / sub_steps,
        evals: sub_steps,
        stop_index: 0,
        mode: SamplingMode::Ddim,
        timestamps,
    })
}

/// The full ancestral chain: `T` evaluations.
pub fn make_ddpm_plan(steps: usize) -> Result<SamplingPlan> {
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    Ok(SamplingPlan {
        total_steps: steps,
        stride: 1,
        evals: steps,
        stop_index: 0,
        mode: SamplingMode::Ddpm,
        timestamps: (0..=steps).rev().collect(),
    })
}

impl SamplingPlan {
    /// Builds a plan from a mode plus `(stride, evals)`; for DDIM, `evals` is ignored and `S = T / stride`.
    pub fn from_parts(mode: SamplingMode, steps: usize, stride: usize, evals: usize) -> Result<Self> {
        match mode {
            SamplingMode::Ecs => make_ecs_plan(steps, stride, evals),
            SamplingMode::Ddim => {
                if stride == 0 || steps % stride != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "stride {stride} must divide T = {steps}"
                    )));
                }
                make_ddim_plan(steps, steps / stride)
            }
            SamplingMode::Ddpm => make_ddpm_plan(steps),
        }
    }

    /// Timesteps at which the estimator is evaluated, in order.
    pub fn eval_timestamps(&self) -> &[usize] {
        match self.mode {
            SamplingMode::Ecs => &self.timestamps,
            SamplingMode::Ddim | SamplingMode::Ddpm => &self.timestamps[..self.timestamps.len() - 1],
        }
    }
}
