//! With an estimator that returns the exact noise, every sampler recovers the
//! clean low bands, however early the truncated sampler stops.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavediff::neural::BandConfig;
use wavediff::pipeline::{procedural_texture, to_spectrum};
use wavediff::sampler::{sample, CountingEstimator, OracleEstimator, SamplerTrace};
use wavediff::schedule::{make_ddim_plan, make_ecs_plan, NoiseSchedule};
use wavediff::wavelet::split_spectrum;

fn main() -> wavediff::Result<()> {
    let bands = BandConfig { levels: 2, n_low: 3, gamma: 0.25 };
    let spectrum = to_spectrum(&procedural_texture(32, 32, 1, 0), bands)?;
    let split = split_spectrum(&spectrum, 3)?;
    let s = NoiseSchedule::default();

    let plans = [make_ddim_plan(1000, 25)?, make_ecs_plan(1000, 100, 8)?, make_ecs_plan(1000, 100, 4)?, make_ecs_plan(1000, 100, 1)?];
    for plan in &plans {
        let mut est = CountingEstimator::new(OracleEstimator { x0: split.low.clone(), schedule: s.clone() });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = SamplerTrace::new(false);
        let out = sample(&mut est, &split.high, spectrum.bands(), plan, &s, &mut rng, &mut trace)?;
        let n = out.data().len() as f64;
        let rmse = (out.data().iter().zip(split.low.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
        println!(
            "{:4} stop {:4}: {:2} estimator calls, RMSE {rmse:.1e}",
            plan.mode.to_string(),
            plan.timestamps.last().unwrap(),
            est.calls
        );
    }
    Ok(())
}
