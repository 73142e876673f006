use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::Classifier;
use super::{ModelConfig, Sample};
use crate::error::Result;
use crate::seed::{self, stream};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
const MAX_CHECKED: usize = 400;
const BATCH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub parameters: usize,
    pub checked: usize,
    /// Parameters whose perturbation crossed a ReLU or pooling boundary,
    /// where the loss is not differentiable and the comparison is skipped.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backpropagated gradients with central differences on a random
/// network and batch drawn from `seed`.
pub fn gradient_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed::derive(seed, stream::TRAIN));
    let mut net = Classifier::init(*config, &mut rng)?;
    // Random biases too, so no unit starts exactly at a ReLU kink.
    let layout = config.layout();
    for range in [
        layout.conv1_b,
        layout.conv2_b,
        layout.dense1_b,
        layout.dense2_b,
    ] {
        for b in &mut net.params_mut()[range.0..range.1] {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let batch: Vec<Sample> = (0..BATCH)
        .map(|_| Sample {
            input: (0..config.input_len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            label: rng.gen_range(0..config.classes),
        })
        .collect();
    check_network(&net, &batch, seed, &mut rng)
}

pub(crate) fn check_network<R: Rng>(
    net: &Classifier,
    batch: &[Sample],
    seed: u64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, analytic) = net.loss_and_gradient(batch)?;
    let patterns: Vec<_> = batch
        .iter()
        .map(|s| net.trace_unchecked(&s.input).pattern())
        .collect();
    let n = net.params().len();
    let picked: Vec<usize> = if n <= MAX_CHECKED {
        (0..n).collect()
    } else {
        let mut v = index::sample(rng, n, MAX_CHECKED).into_vec();
        v.sort_unstable();
        v
    };

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        seed,
        parameters: n,
        checked: 0,
        skipped_kinks: 0,
        max_relative_error: 0.0,
    };
    for i in picked {
        let original = probe.params()[i];
        let mut side = |delta: f64| -> Result<(f64, bool)> {
            probe.params_mut()[i] = original + delta;
            let same = batch
                .iter()
                .zip(&patterns)
                .all(|(s, p)| probe.trace_unchecked(&s.input).pattern() == *p);
            Ok((probe.loss(batch)?, same))
        };
        let (plus, same_plus) = side(STEP)?;
        let (minus, same_minus) = side(-STEP)?;
        probe.params_mut()[i] = original;
        if !(same_plus && same_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        report.checked += 1;
        report.max_relative_error = report
            .max_relative_error
            .max(relative_error(analytic[i], numeric));
    }
    Ok(report)
}
