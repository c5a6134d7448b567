use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::degrade::DegradationSpec;
use crate::error::{Error, Result};
use crate::neural::{BandConfig, SpectrumPair};
use crate::wavelet::{apply_scale, dwt2, ImageGrid, WaveletSpectrum};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DEGRADATION_FILE: &str = "degradation.toml";

/// Reads an 8-bit image as RGB in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<ImageGrid<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    ImageGrid::new(h as usize, w as usize, 3, data, (0.0, 1.0))
}

/// Quantizes a `[0, 1]` image to 8 bits.
pub fn quantize(image: &ImageGrid<f64>) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes a 3-channel `[0, 1]` image as 8-bit PNG. One-channel images are replicated to grey.
pub fn save_png(image: &ImageGrid<f64>, path: &Path) -> Result<()> {
    let rgb = match image.channels() {
        3 => image.clone(),
        1 => ImageGrid::from_fn(image.height(), image.width(), 3, image.range(), |y, x, _| {
            image.get(y, x, 0)
        }),
        c => {
            return Err(Error::InvalidArgument(format!(
                "cannot write a {c}-channel image as PNG"
            )))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(rgb.width() as u32, rgb.height() as u32, quantize(&rgb))
            .expect("buffer sized from the image");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// `[0, 1]` → `[−1, 1]`.
pub fn normalize(image: &ImageGrid<f64>) -> ImageGrid<f64> {
    image.map(|v| v * 2.0 - 1.0).with_range((-1.0, 1.0))
}

/// `[−1, 1]` → `[0, 1]`, clamped.
pub fn denormalize(image: &ImageGrid<f64>) -> ImageGrid<f64> {
    image.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).with_range((0.0, 1.0))
}

/// Normalized, transformed and γ-scaled spectrum of a `[0, 1]` image.
pub fn to_spectrum(image: &ImageGrid<f64>, bands: BandConfig) -> Result<WaveletSpectrum<f64>> {
    apply_scale(&dwt2(&normalize(image), bands.levels)?, bands.gamma)
}

pub fn spectrum_pair(degraded: &ImageGrid<f64>, clean: &ImageGrid<f64>, bands: BandConfig) -> Result<SpectrumPair> {
    if !degraded.same_dims(clean) {
        return Err(Error::ShapeMismatch("degraded and clean images differ in size".into()));
    }
    Ok(SpectrumPair {
        degraded: to_spectrum(degraded, bands)?.into_bands(),
        clean: to_spectrum(clean, bands)?.into_bands(),
    })
}

/// A smooth colour field with a few sinusoidal ripples and one or two hard edges.
pub fn procedural_texture(height: usize, width: usize, seed: u64, index: u64) -> ImageGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let waves: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let freq = rng.random_range(0.5..4.0) * std::f64::consts::TAU;
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.03..0.12);
            let mix = std::array::from_fn(|_| rng.random_range(0.3..1.0));
            (freq * angle.cos(), freq * angle.sin(), phase, amp, mix)
        })
        .collect();
    let edges: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=2))
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = rng.random_range(-0.3..0.3);
            let step = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
            (angle.cos(), angle.sin(), offset, step)
        })
        .collect();
    ImageGrid::from_fn(height, width, 3, (0.0, 1.0), |y, x, c| {
        let v = y as f64 / height as f64 - 0.5;
        let u = x as f64 / width as f64 - 0.5;
        let mut s = base[c];
        for (fy, fx, phase, amp, mix) in &waves {
            s += amp * mix[c] * (fy * v + fx * u + phase).sin();
        }
        for (ny, nx, offset, step) in &edges {
            if ny * v + nx * u > *offset {
                s += step[c];
            }
        }
        s.clamp(0.0, 1.0)
    })
}

/// Writes `count` textures as `tex_00000.png`, … and returns their paths.
pub fn write_textures(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|i| {
            let path = dir.join(format!("tex_{i:05}.png"));
            save_png(&procedural_texture(height, width, seed, i as u64), &path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub clean: PathBuf,
    pub degraded: PathBuf,
}

/// Lists clean/degraded pairs; stored as CSV with header `id,clean,degraded`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub root: PathBuf,
    pub entries: Vec<PairEntry>,
}

pub struct LoadedPair {
    pub id: String,
    pub clean: ImageGrid<f64>,
    pub degraded: ImageGrid<f64>,
}

impl PairManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingArtifact(path.to_path_buf())
            }
            _ => Error::Csv(e),
        })?;
        let entries = reader.deserialize().collect::<std::result::Result<Vec<PairEntry>, _>>()?;
        Ok(Self {
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Loads every pair; a missing file fails with its path.
    pub fn load_pairs(&self) -> Result<Vec<LoadedPair>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.entries
            .iter()
            .map(|e| {
                Ok(LoadedPair {
                    id: e.id.clone(),
                    clean: load_png(&self.resolve(&e.clean))?,
                    degraded: load_png(&self.resolve(&e.degraded))?,
                })
            })
            .collect()
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Degrades every PNG in `clean_dir` into `out_dir/{clean,degraded}/` and writes
/// `manifest.csv` plus the spec as `degradation.toml`.
pub fn synthesize_pairs(clean_dir: &Path, spec: &DegradationSpec, out_dir: &Path) -> Result<PairManifest> {
    spec.validate()?;
    let files = list_pngs(clean_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut entries = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let id = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let clean = load_png(file)?;
        let degraded = spec.apply(&clean, i as u64)?;
        let entry = PairEntry {
            clean: PathBuf::from("clean").join(format!("{id}.png")),
            degraded: PathBuf::from("degraded").join(format!("{id}.png")),
            id,
        };
        save_png(&clean, &out_dir.join(&entry.clean))?;
        save_png(&degraded, &out_dir.join(&entry.degraded))?;
        entries.push(entry);
    }
    let manifest = PairManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let spec_text = toml::to_string(spec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let spec_path = out_dir.join(DEGRADATION_FILE);
    fs::write(&spec_path, spec_text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::degrade::Degradation;

    #[test]
    fn normalization_round_trips_8_bit_values() {
        let data: Vec<f64> = (0..=255u8).map(|b| b as f64 / 255.0).collect();
        let img = ImageGrid::new(16, 16, 1, data.clone(), (0.0, 1.0)).unwrap();
        let back = denormalize(&normalize(&img));
        // 2v − 1 rounds for v < 0.25, so f64 agreement is to the last bit or so.
        assert!(back.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-15));
        let bytes: Vec<u8> = (0..=255u8).collect();
        assert_eq!(quantize(&back), bytes);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = procedural_texture(8, 12, 1, 0);
        let q = ImageGrid::new(8, 12, 3, quantize(&img).iter().map(|&b| b as f64 / 255.0).collect(), (0.0, 1.0))
            .unwrap();
        let p = dir.path().join("a.png");
        save_png(&img, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), q);
        assert!(matches!(
            load_png(&dir.path().join("missing.png")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn textures_are_seeded() {
        assert_eq!(procedural_texture(16, 16, 5, 2), procedural_texture(16, 16, 5, 2));
        assert_ne!(procedural_texture(16, 16, 5, 2), procedural_texture(16, 16, 5, 3));
    }

    #[test]
    fn synthesis_is_byte_identical_and_writes_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let clean = dir.path().join("clean_src");
        write_textures(&clean, 3, 16, 16, 0).unwrap();
        let spec = DegradationSpec {
            kind: Degradation::GaussianNoise { sigma: 25.0 / 255.0 },
            seed: 11,
        };
        let a = synthesize_pairs(&clean, &spec, &dir.path().join("a")).unwrap();
        let b = synthesize_pairs(&clean, &spec, &dir.path().join("b")).unwrap();
        assert_eq!(a.entries, b.entries);
        for e in &a.entries {
            let x = fs::read(a.resolve(&e.degraded)).unwrap();
            let y = fs::read(b.resolve(&e.degraded)).unwrap();
            assert_eq!(x, y);
        }
        let loaded = PairManifest::load(&dir.path().join("a").join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.entries, a.entries);
        assert_eq!(loaded.load_pairs().unwrap().len(), 3);
        let text = fs::read_to_string(dir.path().join("a").join(DEGRADATION_FILE)).unwrap();
        let back: DegradationSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
