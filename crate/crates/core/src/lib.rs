//! Spatially informed independent vector analysis.
//!
//! Separation and extraction of sources from multichannel STFT data with
//! majorize-minimize updates, optionally steered by free-field spatial priors.

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod mixsim;
pub mod pipeline;
pub mod solver;
pub mod source_model;
pub mod stft;
pub mod types;

pub use error::{Error, Result};
