//! End-to-end restoration, synthetic data and quality metrics.

pub mod data;
pub mod degrade;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod restore;

pub use data::{
    denormalize, load_png, normalize, procedural_texture, save_png, spectrum_pair, synthesize_pairs, to_spectrum,
    write_textures, LoadedPair, PairEntry, PairManifest,
};
pub use degrade::{Degradation, DegradationSpec};
pub use experiment::{load_models, load_spectrum_pairs, spectrum_pairs, train_models, Stage};
pub use metrics::{psnr, ssim};
pub use report::{evaluate, evaluate_pairs, EvalReport, EvalRow};
pub use restore::{restore, restore_traced, FixedHighBands, HighBandSource, Models, NoHighBands, RestorationResult};
