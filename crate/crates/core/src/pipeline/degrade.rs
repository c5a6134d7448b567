use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::ImageGrid;

pub const MAX_BLUR_RADIUS: usize = 16;
pub const MAX_DROPS: usize = 256;
pub const MAX_DROP_RADIUS: f64 = 64.0;

/// Synthetic corruptions applied to `[0, 1]` images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    /// Additive N(0, σ²) per value, σ in `[0, 1]`.
    GaussianNoise { sigma: f64 },
    /// Mean over a `(2r+1)²` window with edge clamping, `r ≤ 16`.
    BoxBlur { radius: usize },
    /// Soft bright discs, `count ≤ 256`, `radius` in `(0, 64]`, `opacity` in `[0, 1]`.
    OcclusionDrops { count: usize, radius: f64, opacity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub kind: Degradation,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self.kind {
            Degradation::GaussianNoise { sigma } if !(0.0..=1.0).contains(&sigma) => {
                bad(format!("noise sigma {sigma} outside [0, 1]"))
            }
            Degradation::BoxBlur { radius } if radius > MAX_BLUR_RADIUS => {
                bad(format!("blur radius {radius} above {MAX_BLUR_RADIUS}"))
            }
            Degradation::OcclusionDrops { count, radius, opacity }
                if count > MAX_DROPS
                    || !(radius > 0.0 && radius <= MAX_DROP_RADIUS)
                    || !(0.0..=1.0).contains(&opacity) =>
            {
                bad(format!(
                    "drops count {count}, radius {radius}, opacity {opacity} out of range"
                ))
            }
            _ => Ok(()),
        }
    }

    /// Degrades one image. `stream` separates images sharing the same seed.
    pub fn apply(&self, image: &ImageGrid<f64>, stream: u64) -> Result<ImageGrid<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let (h, w, ch) = (image.height(), image.width(), image.channels());
        let out = match self.kind {
            Degradation::GaussianNoise { sigma } => {
                let mut data = image.data().to_vec();
                for v in &mut data {
                    let n: f64 = rng.sample(StandardNormal);
                    *v = (*v + sigma * n).clamp(0.0, 1.0);
                }
                ImageGrid::new(h, w, ch, data, image.range())?
            }
            Degradation::BoxBlur { radius } => {
                let r = radius as isize;
                let at = |y: isize, x: isize, c: usize| {
                    image.get(y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize, c)
                };
                let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
                ImageGrid::from_fn(h, w, ch, image.range(), |y, x, c| {
                    let mut s = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            s += at(y as isize + dy, x as isize + dx, c);
                        }
                    }
                    s / norm
                })
            }
            Degradation::OcclusionDrops { count, radius, opacity } => {
                let drops: Vec<(f64, f64, f64)> = (0..count)
                    .map(|_| {
                        let cy = rng.random_range(0.0..h as f64);
                        let cx = rng.random_range(0.0..w as f64);
                        let r = radius * rng.random_range(0.5..=1.0);
                        (cy, cx, r)
                    })
                    .collect();
                let mut out = image.clone();
                for y in 0..h {
                    for x in 0..w {
                        let mut cover: f64 = 0.0;
                        for &(cy, cx, r) in &drops {
                            let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                            if d < r {
                                cover = cover.max(1.0 - (d / r).powi(2));
                            }
                        }
                        let a = opacity * cover;
                        for c in 0..ch {
                            let v = image.get(y, x, c);
                            out.set(y, x, c, (1.0 - a) * v + a * (0.85 + 0.1 * v));
                        }
                    }
                }
                out
            }
        };
        Ok(out)
    }
}
