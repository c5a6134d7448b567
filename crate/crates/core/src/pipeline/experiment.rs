//! Training and loading driven by a [`RunConfig`].

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{spectrum_pair, LoadedPair, PairManifest};
use super::restore::Models;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::neural::{
    load_checkpoint, train_diffusion_with, train_hfrm_with, BandConfig, Checkpoint, HfrmNet, NoiseEstimatorNet,
    SpectrumPair, TrainRun,
};
use crate::wavelet::BandLayout;

/// Which network a progress callback refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Hfrm,
    Estimator,
}

pub fn spectrum_pairs(pairs: &[LoadedPair], bands: BandConfig) -> Result<Vec<SpectrumPair>> {
    pairs.iter().map(|p| spectrum_pair(&p.degraded, &p.clean, bands)).collect()
}

pub fn load_spectrum_pairs(manifest: &Path, bands: BandConfig) -> Result<Vec<SpectrumPair>> {
    spectrum_pairs(&PairManifest::load(manifest)?.load_pairs()?, bands)
}

fn init_rng(cfg: &RunConfig, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match stage {
        Stage::Hfrm => 1,
        Stage::Estimator => 2,
    });
    rng
}

/// Trains the refinement network, or returns `None` when every band is diffused.
pub fn train_hfrm_stage(
    cfg: &RunConfig,
    data: &[SpectrumPair],
    progress: &mut dyn FnMut(usize, f64),
) -> Result<Option<TrainRun>> {
    cfg.validate()?;
    let Some(hc) = cfg.hfrm_config()? else {
        return Ok(None);
    };
    let mut net = HfrmNet::<f32>::new(hc, &mut init_rng(cfg, Stage::Hfrm));
    let tc = cfg.train_config(cfg.train.hfrm_iterations);
    train_hfrm_with(&mut net, data, cfg.band_config(), &tc, progress).map(Some)
}

pub fn train_estimator_stage(
    cfg: &RunConfig,
    hfrm: Option<&Checkpoint>,
    data: &[SpectrumPair],
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainRun> {
    cfg.validate()?;
    let mut net = NoiseEstimatorNet::<f32>::new(cfg.estimator_config()?, &mut init_rng(cfg, Stage::Estimator));
    let tc = cfg.train_config(cfg.train.diffusion_iterations);
    let sched = cfg.schedule.build()?;
    train_diffusion_with(&mut net, hfrm, data, &sched, cfg.band_config(), &tc, progress)
}

/// Trains both networks in sequence and returns `(refinement, estimator)` checkpoints.
pub fn train_models(
    cfg: &RunConfig,
    data: &[SpectrumPair],
    progress: &mut dyn FnMut(Stage, usize, f64),
) -> Result<(Option<Checkpoint>, Checkpoint)> {
    let hfrm = train_hfrm_stage(cfg, data, &mut |i, l| progress(Stage::Hfrm, i, l))?.map(|r| r.checkpoint);
    let est = train_estimator_stage(cfg, hfrm.as_ref(), data, &mut |i, l| progress(Stage::Estimator, i, l))?;
    Ok((hfrm, est.checkpoint))
}

/// Loads the checkpoints named by `cfg`, requiring the refinement checkpoint
/// only when the estimator leaves high bands to it.
pub fn load_models(cfg: &RunConfig) -> Result<Models> {
    let est = load_checkpoint(&cfg.estimator_path())?;
    let m = &est.manifest;
    if m.schedule != cfg.schedule {
        return Err(Error::Checkpoint(format!(
            "checkpoint schedule {:?} differs from the config's {:?}",
            m.schedule, cfg.schedule
        )));
    }
    if m.bands != cfg.band_config() {
        return Err(Error::Checkpoint(format!(
            "checkpoint bands {:?} differ from the config's {:?}",
            m.bands,
            cfg.band_config()
        )));
    }
    let total = BandLayout::new(m.bands.levels, 3)?.total_bands();
    let hfrm = if m.bands.n_low < total {
        Some(load_checkpoint(&cfg.hfrm_path())?)
    } else {
        None
    };
    Models::from_checkpoints(&est, hfrm.as_ref())
}
