//! Mood-score regression from smartphone typing sessions.
//!
//! Keystroke metadata and accelerometer streams are fused into one sequence,
//! passed through two strided convolution blocks and a bidirectional GRU, and
//! the scalar output is scaled by a per-subject sine calibration of the
//! session start time. The crate also carries the baselines, a training loop,
//! a synthetic data generator with planted calibration, and the exploratory
//! statistics used to motivate the model.

pub mod analysis;
pub mod config;
pub mod datamodel;
pub mod diffengine;
pub mod error;
pub mod fusion;
pub mod layers;
pub mod modelzoo;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
