pub mod cli;
pub mod config;
pub mod error;
pub mod planes;
pub mod wavelet;

pub use error::{Error, Result};
pub use planes::Planes;
pub mod diffusion;
pub mod sampler;
pub mod schedule;
pub mod neural;
pub mod pipeline;
