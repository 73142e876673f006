use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv1d_backward, conv1d_forward_into, dense_backward, dense_forward, maxpool1d_with_indices,
    relu_backward, relu_in_place, softmax,
};
use super::{argmax_prefer_failure, ModelConfig, Sample, TrainConfig};
use crate::dataset::Pipeline;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub train_config: Option<TrainConfig>,
}

/// A trained network. Immutable once built, so it can be shared across
/// threads for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub(crate) config: ModelConfig,
    pub(crate) params: Vec<f64>,
    pub meta: TrainingMeta,
    /// Preprocessing needed to turn a device history into network input.
    pub pipeline: Option<Pipeline>,
}

/// Intermediate activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub conv1: Vec<f64>,
    pub conv2: Vec<f64>,
    pub pooled: Vec<f64>,
    pub pool_indices: Vec<usize>,
    pub dense: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ForwardTrace {
    /// Which ReLUs are active and which inputs won each pool window; two
    /// passes with equal patterns lie on the same linear piece.
    pub(crate) fn pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let active = self
            .conv1
            .iter()
            .chain(&self.conv2)
            .chain(&self.dense)
            .map(|v| *v > 0.0)
            .collect();
        (active, self.pool_indices.clone())
    }
}

impl Classifier {
    /// Zero-initialized network.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: vec![0.0; config.layout().total],
            meta: TrainingMeta::default(),
            pipeline: None,
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let layout = config.layout();
        for ((start, end), fan_in, fan_out) in layout.weight_blocks(&config) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[start..end] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.layout().total;
        if params.len() != expected {
            return Err(Error::shape("parameter vector", expected, params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters", "non-finite weight"));
        }
        Ok(Self {
            config,
            params,
            meta: TrainingMeta::default(),
            pipeline: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, range: (usize, usize)) -> &[f64] {
        &self.params[range.0..range.1]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.config.input_len() {
            return Err(Error::shape(
                "network input",
                format!(
                    "{} x {}",
                    self.config.input_channels, self.config.input_length
                ),
                format!("{} values", input.len()),
            ));
        }
        Ok(())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        Ok(self.trace_unchecked(input))
    }

    pub(crate) fn trace_unchecked(&self, input: &[f64]) -> ForwardTrace {
        let c = &self.config;
        let l = c.layout();
        let mut conv1 = vec![0.0; c.conv1_filters * c.conv1_len()];
        conv1d_forward_into(
            input,
            c.input_channels,
            c.input_length,
            self.block(l.conv1_w),
            self.block(l.conv1_b),
            c.conv1_width,
            &mut conv1,
        );
        relu_in_place(&mut conv1);
        let mut conv2 = vec![0.0; c.conv2_filters * c.conv2_len()];
        conv1d_forward_into(
            &conv1,
            c.conv1_filters,
            c.conv1_len(),
            self.block(l.conv2_w),
            self.block(l.conv2_b),
            c.conv2_width,
            &mut conv2,
        );
        relu_in_place(&mut conv2);
        let (pooled, pool_indices) =
            maxpool1d_with_indices(&conv2, c.conv2_filters, c.conv2_len(), c.pool_width);
        let mut dense = dense_forward(self.block(l.dense1_w), self.block(l.dense1_b), &pooled);
        relu_in_place(&mut dense);
        let logits = dense_forward(self.block(l.dense2_w), self.block(l.dense2_b), &dense);
        let probabilities = softmax(&logits);
        ForwardTrace {
            conv1,
            conv2,
            pooled,
            pool_indices,
            dense,
            logits,
            probabilities,
        }
    }

    /// Class probabilities for one `C x T` input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.probabilities)
    }

    /// Argmax class (ties go to failure) and the probability vector.
    pub fn predict(&self, input: &[f64]) -> Result<(usize, Vec<f64>)> {
        let p = self.forward(input)?;
        Ok((argmax_prefer_failure(&p), p))
    }

    /// Adds `scale * dLoss/dParams` for one sample's cross-entropy into `grad`
    /// and returns the sample loss.
    pub(crate) fn accumulate_gradient(&self, sample: &Sample, scale: f64, grad: &mut [f64]) -> f64 {
        let trace = self.trace_unchecked(&sample.input);
        self.backward(&sample.input, sample.label, &trace, scale, grad);
        super::layers::cross_entropy(&trace.probabilities, sample.label)
    }

    pub(crate) fn backward(
        &self,
        input: &[f64],
        label: usize,
        trace: &ForwardTrace,
        scale: f64,
        grad: &mut [f64],
    ) {
        let c = &self.config;
        let l = c.layout();
        let (g_conv1_w, rest) = grad.split_at_mut(l.conv1_b.0);
        let (g_conv1_b, rest) = rest.split_at_mut(l.conv2_w.0 - l.conv1_b.0);
        let (g_conv2_w, rest) = rest.split_at_mut(l.conv2_b.0 - l.conv2_w.0);
        let (g_conv2_b, rest) = rest.split_at_mut(l.dense1_w.0 - l.conv2_b.0);
        let (g_dense1_w, rest) = rest.split_at_mut(l.dense1_b.0 - l.dense1_w.0);
        let (g_dense1_b, rest) = rest.split_at_mut(l.dense2_w.0 - l.dense1_b.0);
        let (g_dense2_w, g_dense2_b) = rest.split_at_mut(l.dense2_b.0 - l.dense2_w.0);

        // softmax + cross-entropy
        let g_logits: Vec<f64> = trace
            .probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| scale * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();

        let mut g_dense = dense_backward(
            self.block(l.dense2_w),
            &trace.dense,
            &g_logits,
            g_dense2_w,
            g_dense2_b,
        );
        relu_backward(&trace.dense, &mut g_dense);
        let g_pooled = dense_backward(
            self.block(l.dense1_w),
            &trace.pooled,
            &g_dense,
            g_dense1_w,
            g_dense1_b,
        );

        let mut g_conv2 = vec![0.0; trace.conv2.len()];
        for (g, idx) in g_pooled.iter().zip(&trace.pool_indices) {
            g_conv2[*idx] += g;
        }
        relu_backward(&trace.conv2, &mut g_conv2);

        let mut g_conv1 = vec![0.0; trace.conv1.len()];
        conv1d_backward(
            &trace.conv1,
            c.conv1_filters,
            c.conv1_len(),
            self.block(l.conv2_w),
            c.conv2_width,
            &g_conv2,
            g_conv2_w,
            g_conv2_b,
            Some(&mut g_conv1),
        );
        relu_backward(&trace.conv1, &mut g_conv1);
        conv1d_backward(
            input,
            c.input_channels,
            c.input_length,
            self.block(l.conv1_w),
            c.conv1_width,
            &g_conv1,
            g_conv1_w,
            g_conv1_b,
            None,
        );
    }

    /// Mean cross-entropy and its gradient over `samples`.
    pub fn loss_and_gradient(&self, samples: &[Sample]) -> Result<(f64, Vec<f64>)> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("gradient batch"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / samples.len() as f64;
        let mut total = 0.0;
        for s in samples {
            self.check_input(&s.input)?;
            total += self.accumulate_gradient(s, scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    /// Mean cross-entropy over `samples`.
    pub fn loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("loss batch"));
        }
        let mut total = 0.0;
        for s in samples {
            let p = self.forward(&s.input)?;
            total += super::layers::cross_entropy(&p, s.label);
        }
        Ok(total / samples.len() as f64)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("accuracy batch"));
        }
        let mut hits = 0usize;
        for s in samples {
            hits += usize::from(self.predict(&s.input)?.0 == s.label);
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_network_is_uniform() {
        let net = Classifier::zeros(ModelConfig::desk(3, 10)).unwrap();
        let p = net.forward(&[0.7; 30]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(net.predict(&[0.7; 30]).unwrap().0, 1);
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let net = Classifier::zeros(ModelConfig::desk(3, 10)).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 29]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let config = ModelConfig::desk(4, 12);
        let net = Classifier::init(config, &mut seed::rng(3)).unwrap();
        let l = config.layout();
        let limit = (6.0_f64 / (4.0 * 3.0 + 32.0 * 3.0)).sqrt();
        assert!(net.params[l.conv1_w.0..l.conv1_w.1]
            .iter()
            .all(|w| w.abs() < limit));
        assert!(net.params[l.conv1_b.0..l.conv1_b.1]
            .iter()
            .all(|b| *b == 0.0));
        assert!(net.params[l.conv1_w.0..l.conv1_w.1]
            .iter()
            .any(|w| *w != 0.0));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let config = ModelConfig::desk(2, 9);
        let net = Classifier::init(config, &mut seed::rng(11)).unwrap();
        let mut rng = seed::rng(12);
        for _ in 0..50 {
            let x: Vec<f64> = (0..18).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = net.forward(&x).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
