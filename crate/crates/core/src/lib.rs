//! Noise-aware training (NAT) for saliency estimation.
//!
//! Measured saliency maps built from a handful of fixations are noisy
//! estimates of the true gaze distribution. This crate estimates how noisy,
//! by bootstrap resampling of the measured map, and uses those statistics
//! to train predictors that stop fitting once they are as close to the
//! measurement as the noise allows.
//!
//! Everything is generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`); the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod frames;
pub mod grid;
pub mod ioc;
pub mod metrics;
pub mod nat;
pub mod noise_stats;
pub mod reconstruct;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{GridPoint, SaliencyGrid, Shape};
pub use metrics::{Discrepancy, MetricSet};
pub use nat::PredictedMap;
pub use noise_stats::NoiseStats;
pub use reconstruct::FixationSet;
pub use scalar::Real;
pub use trainer::{ExperimentConfig, LossMode};

pub type Grid = SaliencyGrid<f64>;
pub type Stats = NoiseStats<f64>;
pub type Prediction = PredictedMap<f64>;
pub type DataFrame = frames::Frame<f64>;
pub type Run = trainer::TrainRun<f64>;
