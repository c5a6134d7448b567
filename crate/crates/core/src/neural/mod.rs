//! Conditional noise estimator, high-frequency refinement network, training and checkpoints.

pub mod adapter;
pub mod checkpoint;
pub mod layers;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod train;

pub use adapter::{refine_high, NetEstimator};
pub use checkpoint::{load_checkpoint, save_checkpoint, BandConfig, Checkpoint, Manifest, ModelConfig, TensorEntry};
pub use layers::{Module, Param};
pub use nets::{output_coefficients, EstimatorConfig, HfrmConfig, HfrmNet, NoiseEstimatorNet, Precondition, ResBlock};
pub use optim::{Ema, Optimizer, OptimizerKind};
pub use tensor::{Real, Tensor};
pub use train::{train_diffusion, train_diffusion_with, train_hfrm, train_hfrm_with, SpectrumPair, TrainConfig, TrainRun};
