//! Forward noising process and the two training objectives.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::planes::Planes;
use crate::schedule::NoiseSchedule;

/// I.i.d. standard normal values shaped like the diffused bands.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub values: Planes<f64>,
    /// Identifies the RNG stream the draw came from.
    pub lineage: u64,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize, usize), lineage: u64) -> Self {
        let (c, h, w) = shape;
        let values = Planes::from_fn(c, h, w, |_, _, _| rng.sample(StandardNormal));
        Self { values, lineage }
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            values: Planes::zeros(shape.0, shape.1, shape.2),
            lineage: 0,
        }
    }

    pub fn from_values(values: Planes<f64>) -> Self {
        Self { values, lineage: 0 }
    }
}

/// Closed-form `x_t = √ᾱ_t·x_0 + √(1 − ᾱ_t)·ε`.
pub fn forward_sample(
    x0_low: &Planes<f64>,
    t: usize,
    eps: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0_low.zip_map(&eps.values, |x, e| a * x + b * e)
}

/// One Markov step `x_t = √(1 − β_t)·x_{t−1} + √β_t·z`.
pub fn forward_chain_step(
    x_prev: &Planes<f64>,
    t: usize,
    z: &NoiseDraw,
    sched: &NoiseSchedule,
) -> Result<Planes<f64>> {
    sched.check_step(t)?;
    chain_step_with_beta(x_prev, sched.beta(t), &z.values)
}

pub(crate) fn chain_step_with_beta(x_prev: &Planes<f64>, beta: f64, z: &Planes<f64>) -> Result<Planes<f64>> {
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    x_prev.zip_map(z, |x, n| a * x + b * n)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss inputs of {} and {} elements",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::ShapeMismatch("loss of empty arrays".into()));
    }
    Ok(())
}

/// Mean squared error between predicted and true noise.
pub fn simple_loss(eps_pred: &[f64], eps_true: &[f64]) -> Result<f64> {
    check_pair(eps_pred, eps_true)?;
    let sum: f64 = eps_pred
        .iter()
        .zip(eps_true)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / eps_pred.len() as f64)
}

/// Mean absolute error between estimated and clean high bands.
pub fn hfrm_loss(estimate: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(estimate, target)?;
    let sum: f64 = estimate.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / estimate.len() as f64)
}
