//! Shows the default run configuration as it is echoed into output directories.

use wavediff::config::RunConfig;

fn main() -> wavediff::Result<()> {
    let mut cfg = RunConfig::default();
    print!("{}", cfg.to_toml());
    let e = cfg.estimator_config()?;
    println!("\nestimator input {} channels, output {}", e.in_channels, e.out_channels);

    cfg.bands.n_low = 48;
    let e = cfg.estimator_config()?;
    println!("all bands diffused: input {}, output {}, refinement network: {}", e.in_channels, e.out_channels, cfg.hfrm_config()?.is_some());

    let partial = RunConfig::from_toml("seed = 9\n[plan]\nmode = \"ddim\"\nstride = 40\n")?;
    println!("partial file: seed {}, {} evaluations", partial.seed, partial.plan()?.evals);
    Ok(())
}
