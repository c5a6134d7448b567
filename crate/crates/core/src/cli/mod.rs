//! Command-line front end. The `wavediff` binary only forwards to [`main_with_args`].

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::schedule::SamplingMode;

pub use commands::run;

pub const SEED_ENV: &str = "WAVEDIFF_SEED";

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_MISSING: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "wavediff", version, about = "Wavelet-domain conditional diffusion restoration")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Values applied on top of the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// TOML run config; the flags below take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long = "out", global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub n_low: Option<usize>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub mode: Option<SamplingMode>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true)]
    pub evals: Option<usize>,
    /// Sets both network widths.
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub hfrm_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub diffusion_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub hfrm_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub estimator_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DegradationKind {
    Noise,
    Blur,
    Drops,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes every wavelet band as a PNG plus the raw spectrum and a round-trip report.
    Dwt {
        #[arg(long)]
        image: PathBuf,
    },
    /// Inverts a spectrum written by `dwt`.
    Idwt {
        /// `spectrum.json` from `dwt`.
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Image to compare the reconstruction against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Builds a clean/degraded pair set with `manifest.csv`.
    SynthData {
        /// Degrade these PNGs instead of generating textures.
        #[arg(long)]
        clean_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        textures: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, value_enum, default_value_t = DegradationKind::Noise)]
        degradation: DegradationKind,
        /// Noise standard deviation on the `[0, 1]` scale.
        #[arg(long, default_value_t = 25.0 / 255.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        blur_radius: usize,
        #[arg(long, default_value_t = 6)]
        drops: usize,
        #[arg(long, default_value_t = 4.0)]
        drop_radius: f64,
        #[arg(long, default_value_t = 0.7)]
        opacity: f64,
    },
    /// Trains the high-band refinement network.
    TrainHfrm,
    /// Trains the noise estimator against a frozen refinement network.
    TrainDiffusion,
    /// Restores one image.
    Restore {
        #[arg(long)]
        image: PathBuf,
        /// Defaults to `<out>/restored.png`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Clean image for PSNR and SSIM.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Writes per-step statistics and low-band snapshots here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Restores the evaluation set and writes `eval.csv`.
    Eval {
        #[arg(long)]
        save_images: bool,
    },
    /// Trains and evaluates one variant per diffused-band count.
    AblateBands {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
    },
    /// Sweeps truncated-sampler stride and evaluation counts on fixed checkpoints.
    AblateEcs {
        #[arg(long, value_delimiter = ',', default_value = "40,100")]
        strides: Vec<usize>,
        #[arg(long = "evals-list", value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        evals_list: Vec<usize>,
        /// Timing runs averaged per row.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Trains and evaluates one variant per decomposition depth.
    AblateLevels {
        #[arg(long = "levels-list", value_delimiter = ',', default_value = "1,2,3")]
        levels_list: Vec<usize>,
    },
}

impl Overrides {
    /// Loads the config file, if any, then applies the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            seed => cfg.seed,
            output_dir => cfg.output_dir,
            levels => cfg.bands.levels,
            n_low => cfg.bands.n_low,
            mode => cfg.plan.mode,
            stride => cfg.plan.stride,
            evals => cfg.plan.evals,
            hfrm_iterations => cfg.train.hfrm_iterations,
            diffusion_iterations => cfg.train.diffusion_iterations,
            batch_size => cfg.train.batch_size,
            learning_rate => cfg.train.learning_rate,
            train_manifest => cfg.data.train_manifest,
            eval_manifest => cfg.data.eval_manifest,
        }
        if let Some(g) = self.gamma {
            cfg.bands.gamma = Some(g);
        }
        if let Some(w) = self.width {
            cfg.model.estimator_width = w;
            cfg.model.hfrm_width = w;
        }
        if let Some(p) = &self.hfrm_checkpoint {
            cfg.data.hfrm_checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.estimator_checkpoint {
            cfg.data.estimator_checkpoint = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingArtifact(_)
        | Error::Io { .. }
        | Error::Image { .. }
        | Error::Checkpoint(_)
        | Error::VersionMismatch { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::EmptyDataset => EXIT_MISSING,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
