//! Declarative run settings, stored as TOML next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{BandConfig, EstimatorConfig, HfrmConfig, OptimizerKind, Precondition, TrainConfig};
use crate::schedule::{SamplingMode, SamplingPlan, ScheduleParams};
use crate::wavelet::{default_gamma, BandLayout};

pub const CONFIG_FILE: &str = "config.toml";
pub const HFRM_CHECKPOINT: &str = "hfrm.ckpt";
pub const ESTIMATOR_CHECKPOINT: &str = "estimator.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub schedule: ScheduleParams,
    pub bands: BandSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub plan: PlanSettings,
    pub data: DataSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSettings {
    pub levels: usize,
    /// Diffused bands; the rest come from the refinement network.
    pub n_low: usize,
    /// Defaults to `2^−levels`.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub estimator_width: usize,
    pub hfrm_width: usize,
    pub hfrm_blocks: usize,
    pub input_skip: bool,
    /// Enables output preconditioning with this clean-data spread.
    pub sigma_data: Option<f64>,
    pub center_on_condition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hfrm_iterations: usize,
    pub diffusion_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub ema_decay: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSettings {
    pub mode: SamplingMode,
    /// Step between evaluated timesteps; for DDIM, `T / stride` sub-steps.
    pub stride: usize,
    /// ECS network evaluations.
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    /// Default `<output_dir>/hfrm.ckpt`.
    pub hfrm_checkpoint: Option<PathBuf>,
    /// Default `<output_dir>/estimator.ckpt`.
    pub estimator_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            schedule: ScheduleParams::default(),
            bands: BandSettings::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            plan: PlanSettings::default(),
            data: DataSettings::default(),
        }
    }
}

impl Default for BandSettings {
    fn default() -> Self {
        Self {
            levels: 2,
            n_low: 3,
            gamma: None,
        }
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            estimator_width: 32,
            hfrm_width: 32,
            hfrm_blocks: 5,
            input_skip: true,
            sigma_data: Some(0.1),
            center_on_condition: true,
        }
    }
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hfrm_iterations: 3000,
            diffusion_iterations: 4000,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            ema_decay: None,
        }
    }
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Ecs,
            stride: 100,
            evals: 4,
        }
    }
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            train_manifest: PathBuf::from("data/train/manifest.csv"),
            eval_manifest: PathBuf::from("data/eval/manifest.csv"),
            hfrm_checkpoint: None,
            estimator_checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Writes the config as `config.toml` into `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn total_bands(&self) -> Result<usize> {
        Ok(BandLayout::new(self.bands.levels, 3)?.total_bands())
    }

    pub fn band_config(&self) -> BandConfig {
        BandConfig {
            levels: self.bands.levels,
            n_low: self.bands.n_low,
            gamma: self.bands.gamma.unwrap_or_else(|| default_gamma(self.bands.levels)),
        }
    }

    pub fn hfrm_path(&self) -> PathBuf {
        self.data
            .hfrm_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(HFRM_CHECKPOINT))
    }

    pub fn estimator_path(&self) -> PathBuf {
        self.data
            .estimator_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(ESTIMATOR_CHECKPOINT))
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.total_bands()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=total).contains(&self.bands.n_low) {
            return bad(format!("n_low = {} outside [1, {total}]", self.bands.n_low));
        }
        if let Some(g) = self.bands.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma = {g} must be positive"));
            }
        }
        let m = &self.model;
        if m.estimator_width == 0 || m.hfrm_width == 0 || m.hfrm_blocks == 0 {
            return bad("model widths and block count must be positive".into());
        }
        if let Some(s) = m.sigma_data {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma_data = {s} must be positive"));
            }
        }
        self.schedule.build()?;
        self.plan()?;
        self.train_config(1).validate()
    }

    pub fn plan(&self) -> Result<SamplingPlan> {
        SamplingPlan::from_parts(self.plan.mode, self.schedule.steps, self.plan.stride, self.plan.evals)
    }

    pub fn train_config(&self, iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            ema_decay: self.train.ema_decay,
            seed: self.seed,
            schedule: self.schedule,
            gamma: self.band_config().gamma,
            dataset: self.data.train_manifest.display().to_string(),
            fixed_timestep: None,
        }
    }

    /// `None` when every band is diffused.
    pub fn hfrm_config(&self) -> Result<Option<HfrmConfig>> {
        let total = self.total_bands()?;
        let n = self.bands.n_low;
        Ok((n < total).then_some(HfrmConfig {
            in_channels: total,
            out_channels: total - n,
            width: self.model.hfrm_width,
            blocks: self.model.hfrm_blocks,
            residual_from: Some(n),
        }))
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let total = self.total_bands()?;
        Ok(EstimatorConfig {
            in_channels: 2 * total,
            out_channels: self.bands.n_low,
            width: self.model.estimator_width,
            input_skip: self.model.input_skip,
            precondition: self.model.sigma_data.map(|sigma_data| Precondition {
                sigma_data,
                schedule: self.schedule,
                center_on_condition: self.model.center_on_condition,
            }),
        })
    }
}
