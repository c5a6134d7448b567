//! Trains both networks on procedural textures with Gaussian noise, then
//! restores held-out images with the truncated sampler and with DDIM.
//!
//! `cargo run --release --example train_and_restore -- [hfrm_iters] [estimator_iters] [width]`
//! The defaults finish in about a minute; 3000 4000 32 is the desk setting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavediff::config::RunConfig;
use wavediff::pipeline::{procedural_texture, psnr, save_png, spectrum_pair, train_models, Degradation, DegradationSpec, Models};
use wavediff::schedule::{make_ddim_plan, make_ecs_plan};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> wavediff::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.train.hfrm_iterations = arg(1, 600);
    cfg.train.diffusion_iterations = arg(2, 800);
    cfg.model.estimator_width = arg(3, 16);
    cfg.model.hfrm_width = cfg.model.estimator_width;

    let noise = DegradationSpec { kind: Degradation::GaussianNoise { sigma: 25.0 / 255.0 }, seed: 1 };
    let pair = |i: u64| {
        let clean = procedural_texture(32, 32, 0, i);
        (noise.apply(&clean, i).unwrap(), clean)
    };
    let train: Vec<_> = (0..200).map(pair).collect();
    let held: Vec<_> = (1000..1010).map(pair).collect();
    let data = train.iter().map(|(d, c)| spectrum_pair(d, c, cfg.band_config())).collect::<Result<Vec<_>, _>>()?;

    let (hfrm, est) = train_models(&cfg, &data, &mut |stage, i, loss| {
        if (i + 1) % 200 == 0 {
            println!("{stage:?} {} loss {loss:.4}", i + 1);
        }
    })?;
    let models = Models::from_checkpoints(&est, hfrm.as_ref())?;

    let out = std::env::temp_dir().join("wavediff-restore-example");
    for plan in [make_ecs_plan(1000, 100, 4)?, make_ddim_plan(1000, 25)?] {
        let (mut before, mut after, mut secs) = (0.0, 0.0, 0.0);
        for (i, (degraded, clean)) in held.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let r = models.restore(degraded, &plan, &mut rng, Some(clean))?;
            before += psnr(degraded, clean, 1.0)? / held.len() as f64;
            after += r.psnr.unwrap() / held.len() as f64;
            secs += r.wall_time / held.len() as f64;
            if i == 0 {
                save_png(&r.restored, &out.join(format!("{}.png", plan.mode)))?;
            }
        }
        println!(
            "{} with {} evaluations: {before:.2} dB -> {after:.2} dB, {:.1} ms per image",
            plan.mode,
            plan.evals,
            secs * 1e3
        );
    }
    save_png(&held[0].0, &out.join("degraded.png"))?;
    println!("sample images in {}", out.display());
    Ok(())
}
