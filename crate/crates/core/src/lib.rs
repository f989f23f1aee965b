//! Learning with noisy labels on desk-scale synthetic benchmarks.
//!
//! The training method selects clean samples with self-adaptive,
//! class-balanced thresholds, corrects the remaining labels with a mean
//! teacher, re-weights them with a per-class truncated normal, and adds a
//! consistency term on strongly augmented clean samples.
//!
//! * [`dataset`]: Gaussian blobs, label-noise injection, augmentation, I/O.
//! * [`model`]: MLP with manual backpropagation, SGD, mean teacher.
//! * [`selection`]: global/local thresholds and the clean/noisy partition.
//! * [`reweight`]: label correction and sample weights.
//! * [`trainer`]: epoch orchestration.
//! * [`harness`]: configs, presets, metrics, reports and run directories.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod model;
pub mod reweight;
pub mod rng;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
