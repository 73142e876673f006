//! Failure prediction for devices that emit multivariate time-series telemetry.
//!
//! The pipeline turns daily snapshots into per-device histories ([`ingest`]),
//! slices horizon-shifted windows ([`dataset`]), derives trend and change
//! channels from each window ([`featurize`]), and classifies the stacked
//! channels with a small 1-D convolutional network ([`nn`]) or a bagged,
//! majority-vote ensemble of them ([`ensemble`]). [`eval`] runs the repeated
//! balanced-resampling experiments and [`synth`] generates seeded telemetry
//! with injected failure signatures.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod ingest;
pub mod matrix;
pub mod nn;
pub mod seed;
pub mod synth;

pub use dataset::{EventWindow, WindowSpec};
pub use ensemble::EnsembleModel;
pub use error::{Error, Result};
pub use eval::{Metrics, MetricsSummary};
pub use featurize::{CusumMode, CusumParams, FeatureId, FeatureSet, FeatureStack};
pub use ingest::{DeviceHistory, Normalizer, SnapshotRecord};
pub use matrix::Matrix;
pub use nn::{Classifier, ModelConfig, TrainConfig};
