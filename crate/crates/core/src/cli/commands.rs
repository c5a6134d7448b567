use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cli, Command, DegradationKind};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::neural::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::pipeline::experiment::{spectrum_pairs, train_estimator_stage, train_hfrm_stage, train_models};
use crate::pipeline::{
    evaluate_pairs, load_models, load_png, load_spectrum_pairs, save_png, synthesize_pairs, write_textures,
    Degradation, DegradationSpec, EvalReport, LoadedPair, Models, PairManifest,
};
use crate::planes::Planes;
use crate::sampler::SamplerTrace;
use crate::schedule::{make_ecs_plan, SamplingPlan};
use crate::wavelet::{crop, dwt2, idwt2, reflect_pad, BandLayout, ImageGrid, WaveletSpectrum};

pub const SPECTRUM_FILE: &str = "spectrum.json";
pub const ROUNDTRIP_FILE: &str = "roundtrip.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATE_BANDS_FILE: &str = "ablate_bands.csv";
pub const ABLATE_ECS_FILE: &str = "ablate_ecs.csv";
pub const ABLATE_LEVELS_FILE: &str = "ablate_levels.csv";

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Dwt { image } => cmd_dwt(&cfg, image),
        Command::Idwt {
            spectrum,
            output,
            reference,
        } => cmd_idwt(spectrum, output, reference.as_deref()),
        Command::SynthData {
            clean_dir,
            textures,
            size,
            degradation,
            sigma,
            blur_radius,
            drops,
            drop_radius,
            opacity,
        } => {
            let kind = match degradation {
                DegradationKind::Noise => Degradation::GaussianNoise { sigma: *sigma },
                DegradationKind::Blur => Degradation::BoxBlur { radius: *blur_radius },
                DegradationKind::Drops => Degradation::OcclusionDrops {
                    count: *drops,
                    radius: *drop_radius,
                    opacity: *opacity,
                },
            };
            cmd_synth(&cfg, clean_dir.as_deref(), *textures, *size, kind)
        }
        Command::TrainHfrm => cmd_train_hfrm(&cfg),
        Command::TrainDiffusion => cmd_train_diffusion(&cfg),
        Command::Restore {
            image,
            output,
            truth,
            trace,
        } => cmd_restore(&cfg, image, output.as_deref(), truth.as_deref(), trace.as_deref()),
        Command::Eval { save_images } => cmd_eval(&cfg, *save_images),
        Command::AblateBands { n } => cmd_ablate_bands(&cfg, n),
        Command::AblateEcs {
            strides,
            evals_list,
            repeats,
        } => cmd_ablate_ecs(&cfg, strides, evals_list, *repeats),
        Command::AblateLevels { levels_list } => cmd_ablate_levels(&cfg, levels_list),
    }
}

fn write_csv<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Stretches a plane to `[0, 1]` for viewing.
fn stretch(values: &[f64], channels: usize, h: usize, w: usize) -> ImageGrid<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let planes = Planes::new(channels, h, w, values.iter().map(|v| (v - lo) / span).collect())
        .expect("plane sized by caller");
    ImageGrid::from_planes(&planes, (0.0, 1.0))
}

/// Raw coefficients written by `dwt` and read by `idwt`.
#[derive(Debug, Serialize, Deserialize)]
struct SpectrumFile {
    levels: usize,
    /// Image size before reflect padding.
    height: usize,
    width: usize,
    band_height: usize,
    band_width: usize,
    bands: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RoundTrip {
    bands: usize,
    band_height: usize,
    band_width: usize,
    max_abs_error: f64,
    relative_energy_deviation: f64,
}

fn cmd_dwt(cfg: &RunConfig, image: &Path) -> Result<()> {
    let out = &cfg.output_dir;
    cfg.echo_to(out)?;
    let img = load_png(image)?;
    let levels = cfg.bands.levels;
    let padded = reflect_pad(&img, levels);
    let spec = dwt2(&padded, levels)?;
    let back = idwt2(&spec)?;
    let max_abs_error = back
        .data()
        .iter()
        .zip(padded.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let e = padded.energy();
    let report = RoundTrip {
        bands: spec.band_count(),
        band_height: spec.bands_height(),
        band_width: spec.bands_width(),
        max_abs_error,
        relative_energy_deviation: if e > 0.0 { (spec.energy() - e).abs() / e } else { 0.0 },
    };
    let (bh, bw) = (spec.bands_height(), spec.bands_width());
    for (i, info) in spec.layout().ordering().iter().enumerate() {
        let name = format!(
            "band_{i:03}_l{}_{}_c{}_p{}.png",
            info.level,
            info.subband.name(),
            info.channel,
            info.phase
        );
        save_png(&stretch(spec.band(i), 1, bh, bw), &out.join("bands").join(name))?;
    }
    let file = SpectrumFile {
        levels,
        height: img.height(),
        width: img.width(),
        band_height: bh,
        band_width: bw,
        bands: spec.bands().data().to_vec(),
    };
    write_text(&out.join(SPECTRUM_FILE), &serde_json::to_string(&file)?)?;
    let text = toml::to_string(&report).expect("report serializes");
    write_text(&out.join(ROUNDTRIP_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_idwt(spectrum: &Path, output: &Path, reference: Option<&Path>) -> Result<()> {
    let bytes = fs::read(spectrum).map_err(|e| Error::io(spectrum, e))?;
    let file: SpectrumFile = serde_json::from_slice(&bytes)?;
    let layout = BandLayout::new(file.levels, 3)?;
    let planes = Planes::new(layout.total_bands(), file.band_height, file.band_width, file.bands)?;
    let spec = WaveletSpectrum::new(layout, planes, 1.0)?;
    let img = crop(&idwt2(&spec)?, file.height, file.width).with_range((0.0, 1.0));
    save_png(&img, output)?;
    println!("wrote {}", output.display());
    if let Some(r) = reference {
        let truth = load_png(r)?;
        if !truth.same_dims(&img) {
            return Err(Error::ShapeMismatch("reference and reconstruction differ in size".into()));
        }
        let err = img.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("max_abs_error = {err:e}");
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, clean_dir: Option<&Path>, textures: usize, size: usize, kind: Degradation) -> Result<()> {
    let out = &cfg.output_dir;
    let spec = DegradationSpec { kind, seed: cfg.seed };
    spec.validate()?;
    let source = match clean_dir {
        Some(d) => d.to_path_buf(),
        None => {
            if textures == 0 || size == 0 {
                return Err(Error::InvalidArgument("texture count and size must be positive".into()));
            }
            let dir = out.join("clean");
            write_textures(&dir, textures, size, size, cfg.seed)?;
            dir
        }
    };
    let manifest = synthesize_pairs(&source, &spec, out)?;
    cfg.echo_to(out)?;
    println!("{} pairs in {}", manifest.entries.len(), out.join(crate::pipeline::data::MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

/// Prints about ten progress lines per run and keeps every loss.
struct LossLog {
    name: &'static str,
    total: usize,
    rows: Vec<LossRow>,
}

impl LossLog {
    fn new(name: &'static str, total: usize) -> Self {
        Self {
            name,
            total,
            rows: Vec::with_capacity(total),
        }
    }

    fn record(&mut self, iteration: usize, loss: f64) {
        self.rows.push(LossRow { iteration, loss });
        let every = (self.total / 10).max(1);
        if (iteration + 1) % every == 0 || iteration + 1 == self.total {
            eprintln!("{} {}/{} loss {loss:.5}", self.name, iteration + 1, self.total);
        }
    }
}

fn cmd_train_hfrm(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    cfg.echo_to(out)?;
    let data = load_spectrum_pairs(&cfg.data.train_manifest, cfg.band_config())?;
    let mut log = LossLog::new("hfrm", cfg.train.hfrm_iterations);
    let run = train_hfrm_stage(cfg, &data, &mut |i, l| log.record(i, l))?.ok_or_else(|| {
        Error::InvalidArgument("every band is diffused, so there is no refinement network to train".into())
    })?;
    save_checkpoint(&run.checkpoint, &cfg.hfrm_path())?;
    write_csv(&log.rows, &out.join("hfrm_losses.csv"))?;
    println!("saved {}", cfg.hfrm_path().display());
    Ok(())
}

fn load_hfrm_for(cfg: &RunConfig) -> Result<Option<Checkpoint>> {
    match cfg.hfrm_config()? {
        Some(_) => load_checkpoint(&cfg.hfrm_path()).map(Some),
        None => Ok(None),
    }
}

fn cmd_train_diffusion(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    cfg.echo_to(out)?;
    let hfrm = load_hfrm_for(cfg)?;
    let data = load_spectrum_pairs(&cfg.data.train_manifest, cfg.band_config())?;
    let mut log = LossLog::new("estimator", cfg.train.diffusion_iterations);
    let run = train_estimator_stage(cfg, hfrm.as_ref(), &data, &mut |i, l| log.record(i, l))?;
    save_checkpoint(&run.checkpoint, &cfg.estimator_path())?;
    write_csv(&log.rows, &out.join("estimator_losses.csv"))?;
    println!("saved {}", cfg.estimator_path().display());
    Ok(())
}

fn cmd_restore(
    cfg: &RunConfig,
    image: &Path,
    output: Option<&Path>,
    truth: Option<&Path>,
    trace_dir: Option<&Path>,
) -> Result<()> {
    let out = &cfg.output_dir;
    let models = load_models(cfg)?;
    let plan = cfg.plan()?;
    let degraded = load_png(image)?;
    let truth = truth.map(load_png).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = SamplerTrace::new(trace_dir.is_some());
    let r = models.restore_traced(&degraded, &plan, &mut rng, truth.as_ref(), &mut trace)?;
    cfg.echo_to(out)?;
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| out.join("restored.png"));
    save_png(&r.restored, &path)?;
    println!("{} network evaluations", r.eval_count);
    println!("wall time {:.4} s", r.wall_time);
    if let (Some(p), Some(s)) = (r.psnr, r.ssim) {
        println!("PSNR {p:.2} dB, SSIM {s:.4}");
    }
    if let Some(dir) = trace_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        trace.write_csv(&dir.join("trace.csv"))?;
        for (i, step) in trace.steps.iter().enumerate() {
            if let Some(x) = &step.snapshot {
                let view = x.slice_channels(0..x.channels().min(3));
                let img = stretch(view.data(), view.channels(), view.height(), view.width());
                save_png(&img, &dir.join(format!("step_{i:02}_t{:04}.png", step.t)))?;
            }
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_eval_pairs(cfg: &RunConfig) -> Result<Vec<LoadedPair>> {
    PairManifest::load(&cfg.data.eval_manifest)?.load_pairs()
}

fn cmd_eval(cfg: &RunConfig, save_images: bool) -> Result<()> {
    let out = &cfg.output_dir;
    let models = load_models(cfg)?;
    let plan = cfg.plan()?;
    let pairs = load_eval_pairs(cfg)?;
    cfg.echo_to(out)?;
    let dir = out.join("restored");
    let report = evaluate_pairs(&pairs, &models, &plan, cfg.seed, &mut |id, img| {
        if save_images {
            save_png(img, &dir.join(format!("{id}.png")))?;
        }
        Ok(())
    })?;
    report.write_csv(&out.join(EVAL_FILE))?;
    let a = &report.aggregate;
    println!(
        "{} images: degraded {:.2} dB, restored {:.2} dB, SSIM {:.4}, {:.4} s per image, {} evaluations",
        report.rows.len(),
        a.degraded_psnr,
        a.psnr,
        a.ssim,
        a.wall_time,
        a.eval_count
    );
    Ok(())
}

fn evaluate_variant(cfg: &RunConfig, models: &Models, pairs: &[LoadedPair], plan: &SamplingPlan) -> Result<EvalReport> {
    evaluate_pairs(pairs, models, plan, cfg.seed, &mut |_, _| Ok(()))
}

/// Trains both networks for `cfg`, saves them into its output dir and evaluates.
fn train_and_evaluate(cfg: &RunConfig, train: &[LoadedPair], eval: &[LoadedPair]) -> Result<EvalReport> {
    cfg.echo_to(&cfg.output_dir)?;
    let data = spectrum_pairs(train, cfg.band_config())?;
    let mut hlog = LossLog::new("hfrm", cfg.train.hfrm_iterations);
    let mut elog = LossLog::new("estimator", cfg.train.diffusion_iterations);
    let (hfrm, est) = train_models(cfg, &data, &mut |stage, i, l| match stage {
        crate::pipeline::Stage::Hfrm => hlog.record(i, l),
        crate::pipeline::Stage::Estimator => elog.record(i, l),
    })?;
    if let Some(h) = &hfrm {
        save_checkpoint(h, &cfg.hfrm_path())?;
    }
    save_checkpoint(&est, &cfg.estimator_path())?;
    let models = Models::from_checkpoints(&est, hfrm.as_ref())?;
    let report = evaluate_variant(cfg, &models, eval, &cfg.plan()?)?;
    report.write_csv(&cfg.output_dir.join(EVAL_FILE))?;
    Ok(report)
}

fn variant(cfg: &RunConfig, dir: &str) -> RunConfig {
    let mut v = cfg.clone();
    v.output_dir = cfg.output_dir.join(dir);
    v.data.hfrm_checkpoint = None;
    v.data.estimator_checkpoint = None;
    v
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BandsRow {
    pub n: usize,
    pub psnr: f64,
    pub ssim: f64,
}

fn cmd_ablate_bands(cfg: &RunConfig, ns: &[usize]) -> Result<()> {
    let total = cfg.total_bands()?;
    if let Some(bad) = ns.iter().find(|&&n| n == 0 || n > total) {
        return Err(Error::InvalidArgument(format!("n = {bad} outside [1, {total}]")));
    }
    cfg.echo_to(&cfg.output_dir)?;
    let train = PairManifest::load(&cfg.data.train_manifest)?.load_pairs()?;
    let eval = load_eval_pairs(cfg)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut v = variant(cfg, &format!("bands_{n:03}"));
        v.bands.n_low = n;
        let report = train_and_evaluate(&v, &train, &eval)?;
        let row = BandsRow {
            n,
            psnr: report.aggregate.psnr,
            ssim: report.aggregate.ssim,
        };
        println!("n = {n}: PSNR {:.2} dB, SSIM {:.4}", row.psnr, row.ssim);
        rows.push(row);
    }
    write_csv(&rows, &cfg.output_dir.join(ABLATE_BANDS_FILE))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EcsRow {
    pub stride: usize,
    pub evals: usize,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Mean seconds per image.
    pub time: Option<f64>,
    /// `ok` or the reason the plan was rejected.
    pub status: String,
}

fn cmd_ablate_ecs(cfg: &RunConfig, strides: &[usize], evals_list: &[usize], repeats: usize) -> Result<()> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be positive".into()));
    }
    let models = load_models(cfg)?;
    let pairs = load_eval_pairs(cfg)?;
    cfg.echo_to(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &stride in strides {
        for &evals in evals_list {
            let plan = match make_ecs_plan(cfg.schedule.steps, stride, evals) {
                Ok(p) => p,
                Err(e) => {
                    println!("stride {stride}, evals {evals}: skipped ({e})");
                    rows.push(EcsRow {
                        stride,
                        evals,
                        m: None,
                        psnr: None,
                        ssim: None,
                        time: None,
                        status: e.to_string(),
                    });
                    continue;
                }
            };
            let mut time = 0.0;
            let mut report = None;
            for _ in 0..repeats {
                let r = evaluate_variant(cfg, &models, &pairs, &plan)?;
                time += r.aggregate.wall_time;
                report = Some(r);
            }
            let a = report.expect("at least one repeat").aggregate;
            let m = *plan.timestamps.last().expect("plan is non-empty");
            let row = EcsRow {
                stride,
                evals,
                m: Some(m),
                psnr: Some(a.psnr),
                ssim: Some(a.ssim),
                time: Some(time / repeats as f64),
                status: "ok".into(),
            };
            println!(
                "stride {stride}, evals {evals}, M = {m}: PSNR {:.2} dB, SSIM {:.4}, {:.4} s",
                a.psnr,
                a.ssim,
                time / repeats as f64
            );
            rows.push(row);
        }
    }
    write_csv(&rows, &cfg.output_dir.join(ABLATE_ECS_FILE))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LevelsRow {
    pub levels: usize,
    pub bands: usize,
    pub psnr: f64,
    pub ssim: f64,
}

fn cmd_ablate_levels(cfg: &RunConfig, levels_list: &[usize]) -> Result<()> {
    if let Some(bad) = levels_list.iter().find(|&&l| !(1..=3).contains(&l)) {
        return Err(Error::InvalidArgument(format!("levels = {bad} outside [1, 3]")));
    }
    cfg.echo_to(&cfg.output_dir)?;
    let train = PairManifest::load(&cfg.data.train_manifest)?.load_pairs()?;
    let eval = load_eval_pairs(cfg)?;
    let mut rows = Vec::with_capacity(levels_list.len());
    for &levels in levels_list {
        let mut v = variant(cfg, &format!("levels_{levels}"));
        v.bands.levels = levels;
        v.bands.gamma = None;
        v.validate()?;
        let report = train_and_evaluate(&v, &train, &eval)?;
        let row = LevelsRow {
            levels,
            bands: v.total_bands()?,
            psnr: report.aggregate.psnr,
            ssim: report.aggregate.ssim,
        };
        println!("levels = {levels} ({} bands): PSNR {:.2} dB, SSIM {:.4}", row.bands, row.psnr, row.ssim);
        rows.push(row);
    }
    write_csv(&rows, &cfg.output_dir.join(ABLATE_LEVELS_FILE))
}
