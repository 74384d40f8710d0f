//! Batch commands around the `informed-iva` library: scene simulation,
//! separation, evaluation and parameter sweeps, with JSON configuration,
//! 32-bit float WAV audio and CSV results.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod files;
pub mod separate;
pub mod simulate;
pub mod sweep;

pub use error::{CliError, CliResult};
