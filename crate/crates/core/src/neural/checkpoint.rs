//! Versioned checkpoint files.
//!
//! Layout, all in one file:
//!
//! ```text
//! WAVEDIFF-CKPT 1\n
//! <manifest byte length>\n
//! <pretty JSON manifest>
//! <parameter blob: little-endian f32>
//! ```
//!
//! Each manifest tensor entry gives `name`, `shape`, `offset` and `len` in
//! f32 elements from the start of the blob.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::nets::{EstimatorConfig, HfrmConfig, HfrmNet, NoiseEstimatorNet};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

pub const CHECKPOINT_MAGIC: &str = "WAVEDIFF-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Estimator(EstimatorConfig),
    Hfrm(HfrmConfig),
}

/// How the spectrum is split and scaled for the stored model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub levels: usize,
    pub n_low: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub bands: BandConfig,
    pub schedule: ScheduleParams,
    pub train: TrainConfig,
    pub iteration: u64,
    pub loss_reduction: String,
    pub tensors: Vec<TensorEntry>,
    pub blob_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blob: Vec<f32>,
}

fn flatten<M: Module<f32>>(model: &M) -> (Vec<TensorEntry>, Vec<f32>) {
    let mut params = Vec::new();
    model.params("", &mut params);
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::new();
    for (name, p) in params {
        entries.push(TensorEntry {
            name,
            shape: p.shape.clone(),
            offset: blob.len(),
            len: p.len(),
        });
        blob.extend_from_slice(&p.value);
    }
    (entries, blob)
}

impl Checkpoint {
    fn build<M: Module<f32>>(
        model: &M,
        config: ModelConfig,
        bands: BandConfig,
        schedule: ScheduleParams,
        train: TrainConfig,
        iteration: u64,
    ) -> Self {
        let (tensors, blob) = flatten(model);
        Self {
            manifest: Manifest {
                format_version: CHECKPOINT_VERSION,
                model: config,
                bands,
                schedule,
                train,
                iteration,
                loss_reduction: "mean".into(),
                tensors,
                blob_len: blob.len(),
            },
            blob,
        }
    }

    pub fn from_estimator(
        net: &NoiseEstimatorNet<f32>,
        bands: BandConfig,
        schedule: ScheduleParams,
        train: TrainConfig,
        iteration: u64,
    ) -> Self {
        Self::build(net, ModelConfig::Estimator(net.config), bands, schedule, train, iteration)
    }

    pub fn from_hfrm(
        net: &HfrmNet<f32>,
        bands: BandConfig,
        schedule: ScheduleParams,
        train: TrainConfig,
        iteration: u64,
    ) -> Self {
        Self::build(net, ModelConfig::Hfrm(net.config), bands, schedule, train, iteration)
    }

    /// Copies stored values into `model`, checking names and shapes in order.
    fn fill<M: Module<f32>>(&self, model: &mut M) -> Result<()> {
        let mut named = Vec::new();
        model.params("", &mut named);
        let expected: Vec<(String, Vec<usize>)> =
            named.into_iter().map(|(n, p)| (n, p.shape.clone())).collect();
        let entries = &self.manifest.tensors;
        if expected.len() != entries.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} tensors, model has {}",
                entries.len(),
                expected.len()
            )));
        }
        let mut params = Vec::new();
        model.params_mut(&mut params);
        for ((p, (name, shape)), e) in params.into_iter().zip(&expected).zip(entries) {
            if &e.name != name || &e.shape != shape || e.len != p.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {name} {shape:?}",
                    e.name, e.shape
                )));
            }
            let src = self
                .blob
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} exceeds the blob", e.name)))?;
            p.value.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn estimator(&self) -> Result<NoiseEstimatorNet<f32>> {
        let ModelConfig::Estimator(config) = self.manifest.model else {
            return Err(Error::Checkpoint("checkpoint does not hold a noise estimator".into()));
        };
        let mut net = NoiseEstimatorNet::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        self.fill(&mut net)?;
        Ok(net)
    }

    pub fn hfrm(&self) -> Result<HfrmNet<f32>> {
        let ModelConfig::Hfrm(config) = self.manifest.model else {
            return Err(Error::Checkpoint("checkpoint does not hold a refinement network".into()));
        };
        let mut net = HfrmNet::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        self.fill(&mut net)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec_pretty(&self.manifest)?;
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n{}\n", header.len()).into_bytes();
        out.extend_from_slice(&header);
        out.reserve(self.blob.len() * 4);
        for v in &self.blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {what}"));
        let (magic_line, rest) = split_line(bytes).ok_or_else(|| corrupt("missing magic line"))?;
        let magic_line = std::str::from_utf8(magic_line).map_err(|_| corrupt("magic line is not UTF-8"))?;
        let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        match magic_line.split_once(' ') {
            Some((CHECKPOINT_MAGIC, _)) if magic_line != expected => {
                return Err(Error::VersionMismatch {
                    expected,
                    found: magic_line.to_string(),
                })
            }
            Some((CHECKPOINT_MAGIC, _)) => {}
            _ => return Err(corrupt("not a checkpoint file")),
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| corrupt("missing header length"))?;
        let header_len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad header length"))?;
        if rest.len() < header_len {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::Checkpoint(format!("corrupt manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION.to_string(),
                found: manifest.format_version.to_string(),
            });
        }
        let raw = &rest[header_len..];
        if raw.len() != manifest.blob_len * 4 {
            return Err(corrupt(&format!(
                "blob has {} bytes, manifest declares {} floats",
                raw.len(),
                manifest.blob_len
            )));
        }
        let blob = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { manifest, blob })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor;

    fn sample_estimator() -> (NoiseEstimatorNet<f32>, Checkpoint) {
        let config = EstimatorConfig {
            in_channels: 6,
            out_channels: 1,
            width: 8,
            input_skip: true,
            precondition: Some(crate::neural::nets::Precondition {
                sigma_data: 0.5,
                schedule: ScheduleParams::default(),
                center_on_condition: true,
            }),
        };
        let net = NoiseEstimatorNet::new(config, &mut ChaCha8Rng::seed_from_u64(3));
        let bands = BandConfig {
            levels: 1,
            n_low: 1,
            gamma: 0.5,
        };
        let ckpt = Checkpoint::from_estimator(&net, bands, ScheduleParams::default(), TrainConfig::default(), 17);
        (net, ckpt)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (net, ckpt) = sample_estimator();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&ckpt, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&loaded, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

        let restored = loaded.estimator().unwrap();
        let mut x = Tensor::zeros(6, 1, 4, 4);
        x.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32 * 0.37).sin());
        let y0 = net.forward(&x, &[250]).unwrap();
        let y1 = restored.forward(&x, &[250]).unwrap();
        assert!(y0.data.iter().zip(&y1.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (_, ckpt) = sample_estimator();
        let mut bytes = ckpt.to_bytes().unwrap();
        let pos = CHECKPOINT_MAGIC.len() + 1;
        bytes[pos] = b'9';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (_, ckpt) = sample_estimator();
        let bytes = ckpt.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(b"garbage\n"), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        assert!(ckpt.hfrm().is_err());
    }

    #[test]
    fn missing_file_is_a_missing_artifact() {
        let err = load_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
