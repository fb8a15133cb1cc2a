//! Desk-scale training lab for mixup, CutMix and the three-stage
//! mixup-without-hesitation schedule.
//!
//! The crate is organised bottom-up:
//!
//! * [`rng`]: the single seeded stream every stochastic choice draws from,
//! * [`linalg`]: dense row-major matrices,
//! * [`augment`]: mixup, CutMix and basic augmentation on batches,
//! * [`schedule`]: per-mini-batch mix/clean decisions for every strategy,
//! * [`model`]: ReLU MLP with soft-label cross-entropy and backprop,
//! * [`optim`]: Adam, SGD with momentum and learning-rate schedules,
//! * [`data`]: CSV and toy-image ingestion, scaling, splitting, batching,
//! * [`harness`]: configuration, the training loop, sweeps and plots.

pub mod augment;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
