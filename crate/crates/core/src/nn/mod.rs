//! Convolutional classifier: conv1d → ReLU → conv1d → ReLU → max-pool →
//! dense → ReLU → dense → softmax, trained by backpropagation on
//! cross-entropy.
//!
//! All arithmetic is `f64`. Parameters live in one flat vector (see
//! [`ParamLayout`]) so optimizers and the finite-difference checker can treat
//! them uniformly.

mod gradcheck;
mod io;
pub mod layers;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, GradCheckReport};
pub use io::{load, read_model, save, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use network::{Classifier, ForwardTrace, TrainingMeta};
pub use train::train;

/// One network input: `input_channels x input_length` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_length: usize,
    pub conv1_filters: usize,
    pub conv1_width: usize,
    pub conv2_filters: usize,
    pub conv2_width: usize,
    pub pool_width: usize,
    pub dense_width: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// Small network for laptop-scale runs: 32 filters per conv layer and a
    /// 32-unit dense layer.
    pub fn desk(input_channels: usize, input_length: usize) -> Self {
        Self {
            input_channels,
            input_length,
            conv1_filters: 32,
            conv1_width: 3,
            conv2_filters: 32,
            conv2_width: 3,
            pool_width: 2,
            dense_width: 32,
            classes: 2,
        }
    }

    /// 256 filters per conv layer, kernel width 3, 160-unit dense layer.
    pub fn full(input_channels: usize, input_length: usize) -> Self {
        Self {
            conv1_filters: 256,
            conv2_filters: 256,
            dense_width: 160,
            ..Self::desk(input_channels, input_length)
        }
    }

    pub fn conv1_len(&self) -> usize {
        (self.input_length + 1).saturating_sub(self.conv1_width)
    }

    pub fn conv2_len(&self) -> usize {
        (self.conv1_len() + 1).saturating_sub(self.conv2_width)
    }

    pub fn pooled_len(&self) -> usize {
        self.conv2_len() / self.pool_width.max(1)
    }

    pub fn flat_len(&self) -> usize {
        self.conv2_filters * self.pooled_len()
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("input_length", self.input_length),
            ("conv1_filters", self.conv1_filters),
            ("conv1_width", self.conv1_width),
            ("conv2_filters", self.conv2_filters),
            ("conv2_width", self.conv2_width),
            ("pool_width", self.pool_width),
            ("dense_width", self.dense_width),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least 2"));
        }
        if self.input_length + 2 < self.conv1_width + self.conv2_width + self.pool_width {
            return Err(Error::invalid(
                "input_length",
                format!(
                    "{} too short for conv widths {} and {} plus pool {}",
                    self.input_length, self.conv1_width, self.conv2_width, self.pool_width
                ),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv1_w: (usize, usize),
    pub conv1_b: (usize, usize),
    pub conv2_w: (usize, usize),
    pub conv2_b: (usize, usize),
    pub dense1_w: (usize, usize),
    pub dense1_b: (usize, usize),
    pub dense2_w: (usize, usize),
    pub dense2_b: (usize, usize),
    pub total: usize,
}

impl ParamLayout {
    fn new(c: &ModelConfig) -> Self {
        let sizes = [
            c.conv1_filters * c.input_channels * c.conv1_width,
            c.conv1_filters,
            c.conv2_filters * c.conv1_filters * c.conv2_width,
            c.conv2_filters,
            c.dense_width * c.flat_len(),
            c.dense_width,
            c.classes * c.dense_width,
            c.classes,
        ];
        let mut ranges = [(0, 0); 8];
        let mut offset = 0;
        for (r, s) in ranges.iter_mut().zip(sizes) {
            *r = (offset, offset + s);
            offset += s;
        }
        Self {
            conv1_w: ranges[0],
            conv1_b: ranges[1],
            conv2_w: ranges[2],
            conv2_b: ranges[3],
            dense1_w: ranges[4],
            dense1_b: ranges[5],
            dense2_w: ranges[6],
            dense2_b: ranges[7],
            total: offset,
        }
    }

    /// `(fan_in, fan_out)` for every weight block, with its range.
    pub(crate) fn weight_blocks(&self, c: &ModelConfig) -> [((usize, usize), usize, usize); 4] {
        [
            (
                self.conv1_w,
                c.input_channels * c.conv1_width,
                c.conv1_filters * c.conv1_width,
            ),
            (
                self.conv2_w,
                c.conv1_filters * c.conv2_width,
                c.conv2_filters * c.conv2_width,
            ),
            (self.dense1_w, c.flat_len(), c.dense_width),
            (self.dense2_w, c.dense_width, c.classes),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    /// Adaptive-moment updates (beta1 0.9, beta2 0.999, eps 1e-8).
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Stop when the epoch training loss fails to improve by `min_delta`
    /// for `patience` consecutive epochs.
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            early_stop: Some(EarlyStop {
                patience: 5,
                min_delta: 1e-4,
            }),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Argmax with ties resolved toward the higher class index (class 1, failure,
/// in the binary case).
pub fn argmax_prefer_failure(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probabilities.iter().enumerate() {
        if *p >= probabilities[best] {
            best = i;
        }
    }
    best
}
