//! Compares band splits and truncated-sampler stopping points on quickly
//! trained models. The `ablate-*` subcommands run the same sweeps from files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavediff::config::RunConfig;
use wavediff::pipeline::{procedural_texture, spectrum_pair, train_models, Degradation, DegradationSpec, Models};
use wavediff::schedule::make_ecs_plan;
use wavediff::wavelet::ImageGrid;

fn mean_psnr(models: &Models, plan: &wavediff::schedule::SamplingPlan, held: &[(ImageGrid<f64>, ImageGrid<f64>)]) -> wavediff::Result<(f64, f64)> {
    let (mut p, mut secs) = (0.0, 0.0);
    for (i, (d, c)) in held.iter().enumerate() {
        let r = models.restore(d, plan, &mut ChaCha8Rng::seed_from_u64(i as u64), Some(c))?;
        p += r.psnr.unwrap() / held.len() as f64;
        secs += r.wall_time / held.len() as f64;
    }
    Ok((p, secs))
}

fn main() -> wavediff::Result<()> {
    let noise = DegradationSpec { kind: Degradation::GaussianNoise { sigma: 25.0 / 255.0 }, seed: 1 };
    let pair = |i: u64| {
        let clean = procedural_texture(32, 32, 0, i);
        (noise.apply(&clean, i).unwrap(), clean)
    };
    let train: Vec<_> = (0..100).map(pair).collect();
    let held: Vec<_> = (1000..1008).map(pair).collect();

    let mut base = RunConfig::default();
    base.model.estimator_width = 8;
    base.model.hfrm_width = 8;
    base.train.hfrm_iterations = 300;
    base.train.diffusion_iterations = 300;

    let plan = base.plan()?;
    let mut models_n3 = None;
    println!("diffused bands  PSNR");
    for n in [3, 12, 48] {
        let mut cfg = base.clone();
        cfg.bands.n_low = n;
        let data = train.iter().map(|(d, c)| spectrum_pair(d, c, cfg.band_config())).collect::<Result<Vec<_>, _>>()?;
        let (h, e) = train_models(&cfg, &data, &mut |_, _, _| {})?;
        let models = Models::from_checkpoints(&e, h.as_ref())?;
        println!("{n:14}  {:.2}", mean_psnr(&models, &plan, &held)?.0);
        if n == 3 {
            models_n3 = Some(models);
        }
    }

    let models = models_n3.expect("n = 3 trained");
    println!("\nstride  evals  M     PSNR    ms");
    for evals in 1..=10 {
        let plan = make_ecs_plan(1000, 100, evals)?;
        let (p, secs) = mean_psnr(&models, &plan, &held)?;
        println!("{:6} {evals:6} {:4}  {p:.2}  {:.2}", 100, plan.timestamps.last().unwrap(), secs * 1e3);
    }
    Ok(())
}
