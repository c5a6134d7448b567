use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wavediff::config::RunConfig;
use wavediff::pipeline::{denormalize, normalize, Degradation, DegradationSpec};
use wavediff::sampler::{sample, OracleEstimator, SamplerTrace};
use wavediff::schedule::{make_ddim_plan, make_ecs_plan, make_linear_schedule};
use wavediff::wavelet::{apply_scale, dwt2, idwt2, merge_spectrum, split_spectrum, BandLayout, ImageGrid};
use wavediff::Planes;

fn image_from(values: &[f64], h: usize, w: usize, c: usize) -> ImageGrid<f64> {
    ImageGrid::from_fn(h, w, c, (0.0, 1.0), |y, x, ch| values[((y * w + x) * c + ch) % values.len()])
}

/// Levels, then an image whose sides are multiples of `2^levels`.
fn image_strategy() -> impl Strategy<Value = (usize, ImageGrid<f64>)> {
    (1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(|(levels, kh, kw, c)| {
        let f = 1 << levels;
        let (h, w) = (kh * f, kw * f);
        prop::collection::vec(-1.0f64..1.0, h * w * c).prop_map(move |v| (levels, image_from(&v, h, w, c)))
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_reconstructs_exactly((levels, img) in image_strategy()) {
        let back = idwt2(&dwt2(&img, levels).unwrap()).unwrap();
        prop_assert!(max_diff(back.data(), img.data()) < 1e-12);
    }

    #[test]
    fn transform_reconstructs_in_single_precision((levels, img) in image_strategy()) {
        let img32 = img.cast::<f32>();
        let back = idwt2(&dwt2(&img32, levels).unwrap()).unwrap();
        let err = back.data().iter().zip(img32.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(err < 1e-5);
    }

    #[test]
    fn transform_preserves_energy((levels, img) in image_strategy()) {
        let e = img.energy();
        let s = dwt2(&img, levels).unwrap().energy();
        prop_assert!((s - e).abs() <= 1e-12 * e.max(1e-300));
    }

    #[test]
    fn transform_is_linear((levels, img) in image_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let other = img.map(|v| (3.0 * v).sin());
        let mixed = ImageGrid::from_fn(img.height(), img.width(), img.channels(), (0.0, 1.0), |y, x, c| {
            a * img.get(y, x, c) + b * other.get(y, x, c)
        });
        let (s1, s2) = (dwt2(&img, levels).unwrap(), dwt2(&other, levels).unwrap());
        let sm = dwt2(&mixed, levels).unwrap();
        let expect: Vec<f64> = s1.bands().data().iter().zip(s2.bands().data()).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_diff(sm.bands().data(), &expect) < 1e-12);
    }

    #[test]
    fn split_then_merge_is_identity((levels, img) in image_strategy(), frac in 0.0f64..1.0) {
        let spec = dwt2(&img, levels).unwrap();
        let total = spec.band_count();
        let n = 1 + ((total - 1) as f64 * frac) as usize;
        let split = split_spectrum(&spec, n).unwrap();
        prop_assert_eq!(split.low.channels(), n);
        prop_assert_eq!(split.high.channels(), total - n);
        prop_assert_eq!(&merge_spectrum(&split).unwrap(), &spec);
    }

    #[test]
    fn scaling_is_undone_by_the_inverse((levels, img) in image_strategy(), gamma in 0.05f64..2.0) {
        let scaled = apply_scale(&dwt2(&img, levels).unwrap(), gamma).unwrap();
        prop_assert!(max_diff(idwt2(&scaled).unwrap().data(), img.data()) < 1e-10);
    }

    #[test]
    fn layout_puts_deepest_approximation_first(levels in 1usize..=3, c in 1usize..=4) {
        let layout = BandLayout::new(levels, c).unwrap();
        prop_assert_eq!(layout.total_bands(), c * 4usize.pow(levels as u32));
        for (i, b) in layout.ordering().iter().take(c).enumerate() {
            prop_assert_eq!(b.level, levels);
            prop_assert_eq!(b.channel, i);
        }
    }

    #[test]
    fn schedule_is_monotone(steps in 2usize..2000, lo in 1e-5f64..1e-2, span in 1e-4f64..0.05) {
        let s = make_linear_schedule(steps, lo, lo + span).unwrap();
        let mut prev = 1.0;
        for t in 1..=steps {
            let ab = s.alpha_bar(t);
            prop_assert!(ab > 0.0 && ab < prev);
            prop_assert!(s.posterior_sigma2(t) <= s.beta(t) + 1e-15);
            prev = ab;
        }
    }

    #[test]
    fn ecs_plans_stop_where_expected(k in 1usize..=20, evals in 1usize..=30) {
        let stride = [1, 2, 4, 5, 8, 10, 20, 25, 40, 50, 100, 125, 200, 250, 500][k % 15];
        match make_ecs_plan(1000, stride, evals) {
            Ok(p) => {
                prop_assert!((evals - 1) * stride < 1000);
                prop_assert_eq!(p.timestamps.len(), evals);
                prop_assert_eq!(*p.timestamps.last().unwrap(), 1000 - (evals - 1) * stride);
                prop_assert!(p.timestamps.windows(2).all(|w| w[0] - w[1] == stride));
            }
            Err(_) => prop_assert!((evals - 1) * stride >= 1000),
        }
    }

    #[test]
    fn oracle_sampling_recovers_the_clean_bands(seed in any::<u64>(), evals in 1usize..=10) {
        let sched = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Planes::from_fn(3, 4, 4, |_, _, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let cond = Planes::zeros(48, 4, 4);
        let high = Planes::zeros(45, 4, 4);
        for plan in [make_ecs_plan(1000, 100, evals).unwrap(), make_ddim_plan(1000, 25).unwrap()] {
            let mut est = OracleEstimator { x0: x0.clone(), schedule: sched.clone() };
            let mut trace = SamplerTrace::new(false);
            let out = sample(&mut est, &high, &cond, &plan, &sched, &mut rng, &mut trace).unwrap();
            // Max error bounds the RMSE.
            prop_assert!(max_diff(out.data(), x0.data()) < 1e-4);
            prop_assert_eq!(trace.eval_count, plan.evals);
        }
    }

    #[test]
    fn eight_bit_values_survive_normalization(bytes in prop::collection::vec(any::<u8>(), 12)) {
        let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        let img = ImageGrid::new(2, 2, 3, data, (0.0, 1.0)).unwrap();
        let back = denormalize(&normalize(&img));
        let q: Vec<u8> = back.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        prop_assert_eq!(q, bytes);
    }

    #[test]
    fn noise_is_deterministic_and_in_range(seed in any::<u64>(), sigma in 0.0f64..1.0, stream in 0u64..100) {
        let img = image_from(&[0.1, 0.5, 0.9, 0.3], 8, 8, 3);
        let spec = DegradationSpec { kind: Degradation::GaussianNoise { sigma }, seed };
        let a = spec.apply(&img, stream).unwrap();
        prop_assert_eq!(&a, &spec.apply(&img, stream).unwrap());
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn run_config_round_trips_through_toml(seed in any::<u64>(), evals in 1usize..20, lr in 1e-6f64..1e-1, n in 1usize..=48) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.plan.evals = evals;
        cfg.train.learning_rate = lr;
        cfg.bands.n_low = n;
        prop_assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
