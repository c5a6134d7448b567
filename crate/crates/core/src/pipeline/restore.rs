use std::time::Instant;

use rand::Rng;

use super::data::{denormalize, to_spectrum};
use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::neural::{refine_high, BandConfig, Checkpoint, HfrmNet, NetEstimator, NoiseEstimatorNet};
use crate::planes::Planes;
use crate::sampler::{sample, NoiseEstimator, SamplerTrace};
use crate::schedule::{NoiseSchedule, SamplingPlan};
use crate::wavelet::{crop, idwt2, merge_spectrum, reflect_pad_to, split_spectrum, ImageGrid, SpectrumSplit};

/// Produces the high-band estimate from the full degraded spectrum.
pub trait HighBandSource {
    fn refine(&mut self, spectrum: &Planes<f64>, n_low: usize) -> Result<Planes<f64>>;
}

impl HighBandSource for &HfrmNet<f32> {
    fn refine(&mut self, spectrum: &Planes<f64>, _n_low: usize) -> Result<Planes<f64>> {
        Ok(refine_high(self, std::slice::from_ref(spectrum), 1)?.remove(0))
    }
}

/// Used when every band is diffused.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHighBands;

impl HighBandSource for NoHighBands {
    fn refine(&mut self, spectrum: &Planes<f64>, n_low: usize) -> Result<Planes<f64>> {
        if n_low != spectrum.channels() {
            return Err(Error::InvalidArgument(format!(
                "{} high bands but no refinement network",
                spectrum.channels() - n_low
            )));
        }
        Ok(Planes::zeros(0, spectrum.height(), spectrum.width()))
    }
}

/// Returns a fixed high-band estimate, e.g. the clean bands in oracle runs.
#[derive(Debug, Clone)]
pub struct FixedHighBands(pub Planes<f64>);

impl HighBandSource for FixedHighBands {
    fn refine(&mut self, _spectrum: &Planes<f64>, _n_low: usize) -> Result<Planes<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct RestorationResult {
    pub restored: ImageGrid<f64>,
    /// Only with ground truth.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_time: f64,
    pub eval_count: usize,
}

/// Restores one `[0, 1]` image: transform, refine high bands, sample the low
/// bands, merge and invert.
#[allow(clippy::too_many_arguments)]
pub fn restore<H, E, R>(
    degraded: &ImageGrid<f64>,
    high: &mut H,
    est: &mut E,
    bands: BandConfig,
    plan: &SamplingPlan,
    sched: &NoiseSchedule,
    rng: &mut R,
    truth: Option<&ImageGrid<f64>>,
) -> Result<RestorationResult>
where
    H: HighBandSource + ?Sized,
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    let mut trace = SamplerTrace::new(false);
    restore_traced(degraded, high, est, bands, plan, sched, rng, truth, &mut trace)
}

/// As [`restore`], recording the sampler's steps into `trace`.
#[allow(clippy::too_many_arguments)]
pub fn restore_traced<H, E, R>(
    degraded: &ImageGrid<f64>,
    high: &mut H,
    est: &mut E,
    bands: BandConfig,
    plan: &SamplingPlan,
    sched: &NoiseSchedule,
    rng: &mut R,
    truth: Option<&ImageGrid<f64>>,
    trace: &mut SamplerTrace,
) -> Result<RestorationResult>
where
    H: HighBandSource + ?Sized,
    E: NoiseEstimator + ?Sized,
    R: Rng + ?Sized,
{
    if plan.total_steps != sched.steps() {
        return Err(Error::Checkpoint(format!(
            "plan built for T = {} but the schedule has T = {}",
            plan.total_steps,
            sched.steps()
        )));
    }
    let start = Instant::now();
    let spectrum = to_spectrum(degraded, bands)?;
    let cond = spectrum.bands();
    let refined = high.refine(cond, bands.n_low)?;
    let split = split_spectrum(&spectrum, bands.n_low)?;
    if refined.shape() != split.high.shape() {
        return Err(Error::ShapeMismatch(format!(
            "high-band estimate {:?}, expected {:?}",
            refined.shape(),
            split.high.shape()
        )));
    }
    let before = trace.eval_count;
    let low = sample(est, &refined, cond, plan, sched, rng, trace)?;
    if !low.is_finite() {
        return Err(Error::NonFinite("sampled low bands".into()));
    }
    let merged = merge_spectrum(&SpectrumSplit {
        layout: split.layout,
        scale_applied: split.scale_applied,
        low,
        high: refined,
    })?;
    let restored = denormalize(&idwt2(&merged)?);
    let wall_time = start.elapsed().as_secs_f64();
    let (psnr, ssim) = match truth {
        Some(t) => (Some(psnr(&restored, t, 1.0)?), Some(ssim(&restored, t)?)),
        None => (None, None),
    };
    Ok(RestorationResult {
        restored,
        psnr,
        ssim,
        wall_time,
        eval_count: trace.eval_count - before,
    })
}

/// A trained estimator with its optional refinement network and shared settings.
#[derive(Debug, Clone)]
pub struct Models {
    pub estimator: NoiseEstimatorNet<f32>,
    pub hfrm: Option<HfrmNet<f32>>,
    pub bands: BandConfig,
    pub schedule: NoiseSchedule,
}

impl Models {
    /// Checks that both checkpoints agree on schedule and band split.
    pub fn from_checkpoints(estimator: &Checkpoint, hfrm: Option<&Checkpoint>) -> Result<Self> {
        let m = &estimator.manifest;
        let net = estimator.estimator()?;
        let total = net.config.in_channels / 2;
        let hfrm = match hfrm {
            Some(h) => {
                if h.manifest.schedule != m.schedule || h.manifest.bands != m.bands {
                    return Err(Error::Checkpoint(
                        "refinement and estimator checkpoints disagree on schedule or bands".into(),
                    ));
                }
                Some(h.hfrm()?)
            }
            None if m.bands.n_low == total => None,
            None => {
                return Err(Error::Checkpoint(format!(
                    "estimator diffuses {} of {total} bands and needs a refinement checkpoint",
                    m.bands.n_low
                )))
            }
        };
        Ok(Self {
            estimator: net,
            hfrm,
            bands: m.bands,
            schedule: m.schedule.build()?,
        })
    }

    /// Both image dims must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        (1 << self.bands.levels) * NoiseEstimatorNet::<f32>::SPATIAL_MULTIPLE
    }

    /// Restores an image of any size by reflect-padding and cropping back.
    pub fn restore<R: Rng + ?Sized>(
        &self,
        degraded: &ImageGrid<f64>,
        plan: &SamplingPlan,
        rng: &mut R,
        truth: Option<&ImageGrid<f64>>,
    ) -> Result<RestorationResult> {
        self.restore_traced(degraded, plan, rng, truth, &mut SamplerTrace::new(false))
    }

    pub fn restore_traced<R: Rng + ?Sized>(
        &self,
        degraded: &ImageGrid<f64>,
        plan: &SamplingPlan,
        rng: &mut R,
        truth: Option<&ImageGrid<f64>>,
        trace: &mut SamplerTrace,
    ) -> Result<RestorationResult> {
        let (h, w) = (degraded.height(), degraded.width());
        let padded = reflect_pad_to(degraded, self.spatial_multiple());
        let mut est = NetEstimator { net: &self.estimator };
        let (b, s) = (self.bands, &self.schedule);
        let mut result = match self.hfrm.as_ref() {
            Some(mut net) => restore_traced(&padded, &mut net, &mut est, b, plan, s, rng, None, trace)?,
            None => restore_traced(&padded, &mut NoHighBands, &mut est, b, plan, s, rng, None, trace)?,
        };
        if padded.height() != h || padded.width() != w {
            result.restored = crop(&result.restored, h, w);
        }
        if let Some(t) = truth {
            result.psnr = Some(psnr(&result.restored, t, 1.0)?);
            result.ssim = Some(ssim(&result.restored, t)?);
        }
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::procedural_texture;
    use crate::sampler::{CountingEstimator, OracleEstimator};
    use crate::schedule::{make_ddim_plan, make_ecs_plan, ScheduleParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct CountingHigh<H> {
        inner: H,
        calls: usize,
    }

    impl<H: HighBandSource> HighBandSource for CountingHigh<H> {
        fn refine(&mut self, s: &Planes<f64>, n: usize) -> Result<Planes<f64>> {
            self.calls += 1;
            self.inner.refine(s, n)
        }
    }

    fn bands() -> BandConfig {
        BandConfig {
            levels: 2,
            n_low: 3,
            gamma: 0.25,
        }
    }

    #[test]
    fn oracle_pipeline_is_lossless() {
        let clean = procedural_texture(64, 64, 3, 0);
        let degraded = clean.map(|v| (v + 0.1 * (v * 40.0).sin()).clamp(0.0, 1.0));
        let sched = ScheduleParams::default().build().unwrap();
        let spec = to_spectrum(&clean, bands()).unwrap();
        let split = split_spectrum(&spec, 3).unwrap();
        for plan in [make_ecs_plan(1000, 100, 4).unwrap(), make_ddim_plan(1000, 25).unwrap()] {
            let mut high = CountingHigh {
                inner: FixedHighBands(split.high.clone()),
                calls: 0,
            };
            let mut est = CountingEstimator::new(OracleEstimator {
                x0: split.low.clone(),
                schedule: sched.clone(),
            });
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let r = restore(&degraded, &mut high, &mut est, bands(), &plan, &sched, &mut rng, Some(&clean)).unwrap();
            assert_eq!((r.restored.height(), r.restored.width(), r.restored.channels()), (64, 64, 3));
            let err = r
                .restored
                .data()
                .iter()
                .zip(clean.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-3, "max error {err}");
            assert_eq!(high.calls, 1);
            assert_eq!(r.eval_count, plan.evals);
            assert_eq!(est.calls, plan.evals);
            assert!(r.psnr.unwrap() > 60.0);
        }
    }

    #[test]
    fn metrics_absent_without_truth() {
        let img = procedural_texture(16, 16, 0, 0);
        let sched = ScheduleParams::default().build().unwrap();
        let spec = to_spectrum(&img, bands()).unwrap();
        let split = split_spectrum(&spec, 3).unwrap();
        let mut est = OracleEstimator {
            x0: split.low.clone(),
            schedule: sched.clone(),
        };
        let plan = make_ecs_plan(1000, 100, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = restore(&img, &mut FixedHighBands(split.high), &mut est, bands(), &plan, &sched, &mut rng, None)
            .unwrap();
        assert!(r.psnr.is_none() && r.ssim.is_none());
    }

    #[test]
    fn mismatched_plan_is_rejected() {
        let img = procedural_texture(16, 16, 0, 0);
        let sched = ScheduleParams::default().build().unwrap();
        let plan = make_ecs_plan(500, 100, 4).unwrap();
        let mut est = OracleEstimator {
            x0: Planes::zeros(3, 4, 4),
            schedule: sched.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(restore(&img, &mut NoHighBands, &mut est, bands(), &plan, &sched, &mut rng, None).is_err());
    }
}
