//! Prints the noise schedule and the timesteps visited by each sampler.

use wavediff::schedule::{make_ddim_plan, make_ecs_plan, NoiseSchedule};

fn main() -> wavediff::Result<()> {
    let s = NoiseSchedule::default();
    for t in [1, 10, 100, 500, 700, 1000] {
        println!(
            "t = {t:4}: beta {:.6}  alpha_bar {:.6e}  posterior variance {:.6e}",
            s.beta(t),
            s.alpha_bar(t),
            s.posterior_sigma2(t)
        );
    }

    let ddim = make_ddim_plan(1000, 25)?;
    println!("\nDDIM-25 evaluates at {:?}", ddim.eval_timestamps());
    println!("\nstride  evals  stop M");
    for stride in [40, 100] {
        for evals in [1, 2, 4, 8, 10] {
            match make_ecs_plan(1000, stride, evals) {
                Ok(p) => println!("{stride:6} {evals:6} {:7}", p.timestamps.last().unwrap()),
                Err(e) => println!("{stride:6} {evals:6}  rejected: {e}"),
            }
        }
    }
    Ok(())
}
