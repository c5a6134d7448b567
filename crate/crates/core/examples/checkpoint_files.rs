//! Writes an estimator checkpoint, prints its manifest and reloads it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavediff::config::RunConfig;
use wavediff::neural::{load_checkpoint, save_checkpoint, Checkpoint, NoiseEstimatorNet, TrainConfig};

fn main() -> wavediff::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.model.estimator_width = 8;
    let net = NoiseEstimatorNet::<f32>::new(cfg.estimator_config()?, &mut ChaCha8Rng::seed_from_u64(0));
    let ckpt = Checkpoint::from_estimator(&net, cfg.band_config(), cfg.schedule, TrainConfig::default(), 0);

    let dir = std::env::temp_dir().join("wavediff-checkpoint-example");
    let path = dir.join("estimator.ckpt");
    save_checkpoint(&ckpt, &path)?;
    let bytes = std::fs::read(&path).expect("just written");
    println!("{} bytes at {}", bytes.len(), path.display());
    println!("{} tensors, {} parameters", ckpt.manifest.tensors.len(), ckpt.manifest.blob_len);
    for t in ckpt.manifest.tensors.iter().take(4) {
        println!("  {} {:?} at {}", t.name, t.shape, t.offset);
    }
    let text = String::from_utf8_lossy(&bytes[..256]);
    println!("file starts with:");
    for line in text.lines().take(6) {
        println!("  {line}");
    }

    let loaded = load_checkpoint(&path)?;
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.estimator()?, net);
    println!("reloaded network is identical");
    Ok(())
}
