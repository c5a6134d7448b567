//! Bridges the f32 networks to the f64 sampler and pipeline.

use super::nets::{HfrmNet, NoiseEstimatorNet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::planes::Planes;
use crate::sampler::NoiseEstimator;

/// Exposes a trained estimator through the sampler's [`NoiseEstimator`] trait.
#[derive(Debug, Clone, Copy)]
pub struct NetEstimator<'a> {
    pub net: &'a NoiseEstimatorNet<f32>,
}

impl NoiseEstimator for NetEstimator<'_> {
    fn estimate(
        &mut self,
        x_t: &Planes<f64>,
        cond_high: &Planes<f64>,
        cond_spectrum: &Planes<f64>,
        t: usize,
    ) -> Result<Planes<f64>> {
        let input = Planes::concat(&[x_t, cond_high, cond_spectrum])?.cast::<f32>();
        let out = self.net.forward(&Tensor::from_planes(&[input])?, &[t])?;
        let eps = out.item(0).cast::<f64>();
        if !eps.is_finite() {
            return Err(Error::NonFinite(format!("estimator output at t = {t}")));
        }
        Ok(eps)
    }
}

/// Runs the refinement network over spectra in chunks of `chunk`.
pub fn refine_high(net: &HfrmNet<f32>, spectra: &[Planes<f64>], chunk: usize) -> Result<Vec<Planes<f64>>> {
    let mut out = Vec::with_capacity(spectra.len());
    for group in spectra.chunks(chunk.max(1)) {
        let items: Vec<Planes<f32>> = group.iter().map(|s| s.cast()).collect();
        let y = net.forward(&Tensor::from_planes(&items)?)?;
        for n in 0..y.batch {
            let p = y.item(n).cast::<f64>();
            if !p.is_finite() {
                return Err(Error::NonFinite("refinement network output".into()));
            }
            out.push(p);
        }
    }
    Ok(out)
}
