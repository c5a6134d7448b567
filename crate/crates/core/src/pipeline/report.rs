use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{LoadedPair, PairManifest};
use super::metrics::psnr;
use super::restore::Models;
use crate::error::{Error, Result};
use crate::schedule::SamplingPlan;
use crate::wavelet::ImageGrid;

/// Label of the aggregate row.
pub const AGGREGATE_ID: &str = "mean";

/// One CSV row: `image,degraded_psnr,psnr,ssim,wall_time,eval_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: String,
    pub degraded_psnr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub wall_time: f64,
    pub eval_count: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalRow,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let aggregate = EvalRow {
            image: AGGREGATE_ID.into(),
            degraded_psnr: mean(|r| r.degraded_psnr),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            wall_time: mean(|r| r.wall_time),
            eval_count: mean(|r| r.eval_count),
        };
        Ok(Self { rows, aggregate })
    }

    /// Per-image rows followed by the aggregate row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<EvalRow>, _>>()?)
    }
}

/// Restores every pair; image `i` samples from stream `i` of `seed`.
///
/// `on_restored` receives each id and restored image, e.g. to save it.
pub fn evaluate_pairs(
    pairs: &[LoadedPair],
    models: &Models,
    plan: &SamplingPlan,
    seed: u64,
    on_restored: &mut dyn FnMut(&str, &ImageGrid<f64>) -> Result<()>,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let r = models.restore(&p.degraded, plan, &mut rng, Some(&p.clean))?;
        on_restored(&p.id, &r.restored)?;
        rows.push(EvalRow {
            image: p.id.clone(),
            degraded_psnr: psnr(&p.degraded, &p.clean, 1.0)?,
            psnr: r.psnr.expect("truth supplied"),
            ssim: r.ssim.expect("truth supplied"),
            wall_time: r.wall_time,
            eval_count: r.eval_count as f64,
        });
    }
    EvalReport::from_rows(rows)
}

pub fn evaluate(manifest: &PairManifest, models: &Models, plan: &SamplingPlan, seed: u64) -> Result<EvalReport> {
    evaluate_pairs(&manifest.load_pairs()?, models, plan, seed, &mut |_, _| Ok(()))
}
