use crate::error::{Error, Result};
use crate::wavelet::ImageGrid;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {}x{}x{} and {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageGrid<f64>, b: &ImageGrid<f64>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
///
/// Only windows lying fully inside the image contribute. The dynamic range is
/// taken from `a`'s declared range.
pub fn ssim(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let (lo, hi) = a.range();
    let l = hi - lo;
    let (c1, c2) = ((SSIM_K1 * l).powi(2), (SSIM_K2 * l).powi(2));
    let taps = gaussian_taps();
    let (pa, pb) = (a.to_planes(), b.to_planes());
    let mut total = 0.0;
    for c in 0..ch {
        let (x, y) = (pa.plane(c), pb.plane(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(x, h, w, &taps);
        let (my, _, _) = filter_valid(y, h, w, &taps);
        let (sxx, _, _) = filter_valid(&xx, h, w, &taps);
        let (syy, _, _) = filter_valid(&yy, h, w, &taps);
        let (sxy, _, _) = filter_valid(&xy, h, w, &taps);
        let n = mx.len() as f64;
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / n;
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, 3, (0.0, 1.0), |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_examples() {
        let a = random(8, 8, 0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let z = ImageGrid::from_fn(8, 8, 3, (0.0, 1.0), |_, _, _| 0.2);
        let o = z.map(|v| v + 0.1);
        assert!((psnr(&z, &o, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let b = random(8, 8, 1);
        let m: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 192.0;
        assert!((psnr(&a, &b, 1.0).unwrap() + 10.0 * m.log10()).abs() < 1e-9);
        assert!(psnr(&a, &random(8, 4, 1), 1.0).is_err());
    }

    /// Direct per-window weighted sums, no separable filtering.
    fn naive_ssim(a: &ImageGrid<f64>, b: &ImageGrid<f64>) -> f64 {
        let t = gaussian_taps();
        let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
        let k = SSIM_WINDOW;
        let mut total = 0.0;
        for c in 0..a.channels() {
            let mut sum = 0.0;
            let mut n = 0.0;
            for y0 in 0..=a.height() - k {
                for x0 in 0..=a.width() - k {
                    let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let wgt = t[i] * t[j];
                            let p = a.get(y0 + i, x0 + j, c);
                            let q = b.get(y0 + i, x0 + j, c);
                            ux += wgt * p;
                            uy += wgt * q;
                            xx += wgt * p * p;
                            yy += wgt * q * q;
                            xy += wgt * p * q;
                        }
                    }
                    let (vx, vy, cv) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                    sum += ((2.0 * ux * uy + c1) * (2.0 * cv + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                    n += 1.0;
                }
            }
            total += sum / n;
        }
        total / a.channels() as f64
    }

    #[test]
    fn ssim_matches_per_window_computation() {
        for seed in 0..3 {
            let a = random(16, 14, seed);
            let b = a.map(|v| (v * 0.8 + 0.1).sin());
            assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_bounds() {
        let a = random(16, 16, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let flat = ImageGrid::from_fn(16, 16, 3, (0.0, 1.0), |_, _, _| 0.5);
        let s = ssim(&a, &flat).unwrap();
        assert!(s > -1.0 && s < 1.0);
        assert!(ssim(&random(8, 8, 0), &random(8, 8, 1)).is_err());
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // scikit-image 0.25 structural_similarity, gaussian_weights, sigma 1.5,
        // population covariance, data_range 1.0, on the formula images below.
        let reference = [
            0.8458000439624618,
            0.9407674505651579,
            0.9619505962669018,
            0.9665754655647628,
            0.9661795692985953,
            0.9664966954931992,
            0.9674997970452327,
            0.9659181198486557,
            0.9621483788265071,
            0.9399623275284771,
        ];
        for (k, &expected) in reference.iter().enumerate() {
            let kf = k as f64;
            let a = ImageGrid::from_fn(24, 20, 3, (0.0, 1.0), |y, x, c| {
                0.5 + 0.4 * (0.31 * (kf + 1.0) * y as f64 + 0.17 * x as f64 + 1.3 * c as f64).sin()
            });
            let b = ImageGrid::from_fn(24, 20, 3, (0.0, 1.0), |y, x, c| {
                let (yf, xf, cf) = (y as f64, x as f64, c as f64);
                let noise = 0.15 * (1.7 * xf + 2.3 * yf + 0.5 * kf + cf).sin() * (0.045 * xf * yf + kf).cos();
                (a.get(y, x, c) + noise).clamp(0.0, 1.0)
            });
            let got = ssim(&a, &b).unwrap();
            assert!((got - expected).abs() < 1e-4, "pair {k}: {got} vs {expected}");
        }
    }
}
