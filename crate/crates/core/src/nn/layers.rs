//! Forward and backward kernels on flat row-major buffers.

use crate::error::{Error, Result};

/// Valid 1-D cross-correlation along time, summed over input channels.
///
/// `input` is `channels x length`, `kernels` is `filters x channels x width`,
/// and the result is `filters x (length - width + 1)`. No activation is
/// applied here.
pub fn conv1d_forward(
    input: &[f64],
    channels: usize,
    length: usize,
    kernels: &[f64],
    bias: &[f64],
    width: usize,
) -> Result<Vec<f64>> {
    if width == 0 || length < width {
        return Err(Error::invalid(
            "conv1d input",
            format!("length {length} shorter than kernel width {width}"),
        ));
    }
    let filters = bias.len();
    if input.len() != channels * length {
        return Err(Error::shape("conv1d input", channels * length, input.len()));
    }
    if kernels.len() != filters * channels * width {
        return Err(Error::shape(
            "conv1d kernels",
            filters * channels * width,
            kernels.len(),
        ));
    }
    let mut out = vec![0.0; filters * (length - width + 1)];
    conv1d_forward_into(input, channels, length, kernels, bias, width, &mut out);
    Ok(out)
}

pub(crate) fn conv1d_forward_into(
    input: &[f64],
    channels: usize,
    length: usize,
    kernels: &[f64],
    bias: &[f64],
    width: usize,
    out: &mut [f64],
) {
    let out_len = length - width + 1;
    for (n, b) in bias.iter().enumerate() {
        let row = &mut out[n * out_len..(n + 1) * out_len];
        row.fill(*b);
        for c in 0..channels {
            let x = &input[c * length..(c + 1) * length];
            let w = &kernels[(n * channels + c) * width..(n * channels + c + 1) * width];
            for (k, wk) in w.iter().enumerate() {
                for (o, xv) in row.iter_mut().zip(&x[k..k + out_len]) {
                    *o += wk * xv;
                }
            }
        }
    }
}

/// Accumulates kernel and bias gradients and, if `grad_input` is given, the
/// gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    input: &[f64],
    channels: usize,
    length: usize,
    kernels: &[f64],
    width: usize,
    grad_out: &[f64],
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let out_len = length - width + 1;
    for (n, gb) in grad_bias.iter_mut().enumerate() {
        let go = &grad_out[n * out_len..(n + 1) * out_len];
        *gb += go.iter().sum::<f64>();
        for c in 0..channels {
            let x = &input[c * length..(c + 1) * length];
            let base = (n * channels + c) * width;
            for k in 0..width {
                grad_kernels[base + k] += go
                    .iter()
                    .zip(&x[k..k + out_len])
                    .map(|(g, v)| g * v)
                    .sum::<f64>();
            }
            if let Some(gi) = grad_input.as_deref_mut() {
                let gx = &mut gi[c * length..(c + 1) * length];
                for k in 0..width {
                    let w = kernels[base + k];
                    for (dst, g) in gx[k..k + out_len].iter_mut().zip(go) {
                        *dst += w * g;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling over time; a trailing partial window is
/// dropped. Returns the pooled `channels x (length / width)` values.
pub fn maxpool1d(input: &[f64], channels: usize, length: usize, width: usize) -> Result<Vec<f64>> {
    if width == 0 || length < width {
        return Err(Error::invalid(
            "maxpool input",
            format!("length {length} shorter than pool width {width}"),
        ));
    }
    if input.len() != channels * length {
        return Err(Error::shape(
            "maxpool input",
            channels * length,
            input.len(),
        ));
    }
    Ok(maxpool1d_with_indices(input, channels, length, width).0)
}

/// Pooled values plus the flat input index each one came from (first
/// maximum wins on ties).
pub(crate) fn maxpool1d_with_indices(
    input: &[f64],
    channels: usize,
    length: usize,
    width: usize,
) -> (Vec<f64>, Vec<usize>) {
    let out_len = length / width;
    let mut values = Vec::with_capacity(channels * out_len);
    let mut indices = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for p in 0..out_len {
            let start = c * length + p * width;
            let mut best = start;
            for i in start + 1..start + width {
                if input[i] > input[best] {
                    best = i;
                }
            }
            values.push(input[best]);
            indices.push(best);
        }
    }
    (values, indices)
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was not positive; the ReLU
/// derivative at zero is taken as 0.
pub(crate) fn relu_backward(activation: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `out = weights * input + bias` with `weights` stored `rows x cols`.
pub(crate) fn dense_forward(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let cols = input.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| {
            b + weights[r * cols..(r + 1) * cols]
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f64>()
        })
        .collect()
}

pub(crate) fn dense_backward(
    weights: &[f64],
    input: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let cols = input.len();
    let mut grad_input = vec![0.0; cols];
    for (r, g) in grad_out.iter().enumerate() {
        grad_bias[r] += g;
        if *g == 0.0 {
            continue;
        }
        let w = &weights[r * cols..(r + 1) * cols];
        let gw = &mut grad_weights[r * cols..(r + 1) * cols];
        for c in 0..cols {
            gw[c] += g * input[c];
            grad_input[c] += g * w[c];
        }
    }
    grad_input
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy `-ln p[label]` for one prediction.
pub fn cross_entropy(probabilities: &[f64], label: usize) -> f64 {
    -probabilities[label].max(PROB_FLOOR).ln()
}

/// Mean cross-entropy over a batch.
pub fn loss(batch: &[(Vec<f64>, usize)]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|(p, y)| cross_entropy(p, *y)).sum::<f64>() / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_hand_example() {
        let out =
            conv1d_forward(&[1.0, 2.0, 3.0, 4.0], 1, 4, &[1.0, 0.0, -1.0], &[0.0], 3).unwrap();
        assert_eq!(out, vec![-2.0, -2.0]);
    }

    #[test]
    fn conv1d_identity_and_bias() {
        let x = [0.5, -1.0, 2.0];
        assert_eq!(
            conv1d_forward(&x, 1, 3, &[1.0], &[0.0], 1).unwrap(),
            x.to_vec()
        );
        let out = conv1d_forward(&x, 1, 3, &[0.0, 0.0], &[1.5], 2).unwrap();
        assert_eq!(out, vec![1.5, 1.5]);
    }

    #[test]
    fn conv1d_sums_over_channels() {
        // two channels, two filters
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let w = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, -1.0, 0.0];
        let out = conv1d_forward(&x, 2, 3, &w, &[0.0, 1.0], 2).unwrap();
        assert_eq!(out, vec![21.0, 32.0, -7.0, -16.0]);
    }

    #[test]
    fn conv1d_rejects_short_input() {
        assert!(conv1d_forward(&[1.0, 2.0], 1, 2, &[1.0, 1.0, 1.0], &[0.0], 3).is_err());
    }

    #[test]
    fn maxpool_examples() {
        assert_eq!(
            maxpool1d(&[1.0, 3.0, 2.0, 5.0], 1, 4, 2).unwrap(),
            vec![3.0, 5.0]
        );
        assert_eq!(maxpool1d(&[2.0; 6], 1, 6, 3).unwrap(), vec![2.0, 2.0]);
        assert_eq!(
            maxpool1d(&[4.0, 1.0, 1.0, 1.0, 9.0], 1, 5, 2).unwrap(),
            vec![4.0, 1.0]
        );
        assert!(maxpool1d(&[1.0], 1, 1, 2).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.5, 0.5], 0) - 0.693147).abs() < 1e-6);
        assert!(cross_entropy(&[1.0 - 1e-9, 1e-9], 0) < 1e-8);
        let clamped = cross_entropy(&[1.0, 0.0], 1);
        assert!(clamped.is_finite());
        assert!((clamped - 1e12f64.ln()).abs() < 1e-9);
        let batch = vec![(vec![0.5, 0.5], 0), (vec![0.5, 0.5], 1)];
        assert!((loss(&batch) - 2f64.ln()).abs() < 1e-15);
    }
}
