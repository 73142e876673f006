use log::debug;
use rand::seq::SliceRandom;

use super::network::{Classifier, TrainingMeta};
use super::{ModelConfig, Optimizer, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
}

/// Mini-batch training on mean cross-entropy.
///
/// Weight initialization and the per-epoch batch order come from independent
/// streams derived from `train_config.seed`, so identical inputs always yield
/// bit-identical weights.
pub fn train(
    model_config: ModelConfig,
    train_config: &TrainConfig,
    samples: &[Sample],
) -> Result<Classifier> {
    train_config.validate()?;
    model_config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    for s in samples {
        if s.input.len() != model_config.input_len() {
            return Err(Error::shape(
                "training sample",
                model_config.input_len(),
                s.input.len(),
            ));
        }
        if s.label >= model_config.classes {
            return Err(Error::invalid(
                "label",
                format!(
                    "{} out of range for {} classes",
                    s.label, model_config.classes
                ),
            ));
        }
    }

    let mut net = Classifier::init(
        model_config,
        &mut seed::rng(seed::derive(train_config.seed, stream::INIT)),
    )?;
    let mut order_rng = seed::rng(seed::derive(train_config.seed, stream::SHUFFLE));
    let n_params = net.params().len();
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; n_params];
    let mut loss_curve = Vec::with_capacity(train_config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..train_config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(train_config.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += net.accumulate_gradient(&samples[i], scale, &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss * scale,
                });
            }
            epoch_loss += batch_loss;
            match train_config.optimizer {
                Optimizer::Adam => adam.update(net.params_mut(), &grad, train_config.learning_rate),
                Optimizer::Sgd => {
                    for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                        *p -= train_config.learning_rate * g;
                    }
                }
            }
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: f64::NAN,
                });
            }
        }
        let epoch_loss = epoch_loss / samples.len() as f64;
        loss_curve.push(epoch_loss);
        debug!("epoch {epoch}: loss {epoch_loss:.6}");
        if let Some(stop) = train_config.early_stop {
            if epoch_loss < best - stop.min_delta {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    break;
                }
            }
        }
    }

    net.meta = TrainingMeta {
        seed: train_config.seed,
        epochs_run: loss_curve.len(),
        loss_curve,
        train_config: Some(*train_config),
    };
    Ok(net)
}
