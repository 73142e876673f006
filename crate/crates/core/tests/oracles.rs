//! Transforms and metrics checked against independent brute-force oracles.

use diskfail::eval::{compute_metrics, f1_score, Metrics, MetricsSummary, RunRecord, Stat};
use diskfail::featurize::{
    build_feature_stack, conv_time, cumulative_sum, cusum, edge_change, reversal_counts, CusumMode,
    CusumParams, EdgeKernel, FeatureConfig, FeatureSet, Padding,
};
use diskfail::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_reversal(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| (0..t).filter(|&i| x[i] < x[t]).count() as f64)
        .collect()
}

/// Positive and negative sums written out index by index.
fn direct_cusum(x: &[f64], mode: CusumMode, init: usize, k: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut s = vec![0.0; n];
    for t in 0..n {
        s[t] = match mode {
            CusumMode::F1 => x[t],
            CusumMode::F2 if t == 0 => 0.0,
            CusumMode::F2 => x[t] - x[t - 1],
        };
    }
    let mut total = 0.0;
    for v in &s[..init] {
        total += v;
    }
    let target = total / init as f64;
    let mut gp = vec![0.0; n];
    let mut gn = vec![0.0; n];
    for t in 0..n {
        let prev_p = if t == 0 { 0.0 } else { gp[t - 1] };
        let prev_n = if t == 0 { 0.0 } else { gn[t - 1] };
        gp[t] = f64::max(0.0, prev_p + s[t] - (target + k));
        gn[t] = f64::max(0.0, prev_n - s[t] + (target - k));
    }
    (gp, gn)
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // Small integer alphabet so ties are common.
    (0..len).map(|_| rng.gen_range(0..6) as f64).collect()
}

#[test]
fn reversal_counts_match_brute_force_on_200_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..200 {
        let len = rng.gen_range(1..80);
        let x: Vec<f64> = if i % 2 == 0 {
            random_series(&mut rng, len)
        } else {
            (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect()
        };
        let got = reversal_counts(&Matrix::from_column(&x)).column(0);
        assert_eq!(got, brute_reversal(&x), "series {i}");
    }
}

#[test]
fn cusum_matches_direct_loop_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..200 {
        let len = rng.gen_range(2..60);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let init = rng.gen_range(1..=len);
        let k = if i % 3 == 0 {
            0.0
        } else {
            rng.gen_range(0.0..5.0)
        };
        for mode in [CusumMode::F1, CusumMode::F2] {
            let params = CusumParams {
                slack: k,
                ..CusumParams::new(mode).with_init_period(init)
            };
            let (p, n) = cusum(&Matrix::from_column(&x), &params).unwrap();
            let (ep, en) = direct_cusum(&x, mode, init, k);
            assert_eq!(p.column(0), ep, "g+ series {i} {mode:?}");
            assert_eq!(n.column(0), en, "g- series {i} {mode:?}");
        }
    }
}

#[test]
fn edge_and_cumsum_invert_each_other() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let len = rng.gen_range(2..100);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let m = Matrix::from_column(&x);
        // Summing the daily changes gives the offset from the first day.
        let back = cumulative_sum(&edge_change(&m, EdgeKernel::Adjacent).unwrap()).column(0);
        for t in 0..len {
            assert!((back[t] - (x[t] - x[0])).abs() <= 1e-9);
        }
        // Differencing the running total gives the series back after day 0.
        let diff = edge_change(&cumulative_sum(&m), EdgeKernel::Adjacent)
            .unwrap()
            .column(0);
        assert_eq!(diff[0], 0.0);
        for t in 1..len {
            assert!((diff[t] - x[t]).abs() <= 1e-9);
        }
    }
}

fn brute_confusion(pred: &[usize], label: &[usize]) -> (usize, usize, usize, usize) {
    let count = |p: usize, l: usize| {
        pred.iter()
            .zip(label)
            .filter(|(a, b)| **a == p && **b == l)
            .count()
    };
    (count(1, 1), count(1, 0), count(0, 0), count(0, 1))
}

#[test]
fn metrics_match_confusion_oracle_on_1000_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let n = rng.gen_range(1..50);
        let bias = rng.gen_range(0.0..1.0);
        let pred: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(bias))).collect();
        let label: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let m = compute_metrics(&pred, &label).unwrap();
        let (tp, fp, tn, fn_) = brute_confusion(&pred, &label);
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
        let p = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let r = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        assert_eq!(m.precision, p);
        assert_eq!(m.recall, r);
        assert_eq!(m.accuracy, (tp + tn) as f64 / n as f64);
        if p > 0.0 && r > 0.0 {
            assert!((m.f1 - 1.0 / ((1.0 / p + 1.0 / r) / 2.0)).abs() < 1e-12);
        } else {
            assert_eq!(m.f1, 0.0);
        }
    }
}

#[test]
fn f1_from_reference_precision_and_recall() {
    assert!((f1_score(0.95, 0.67) - 0.7858).abs() < 1e-4);
}

#[test]
fn summary_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let records: Vec<RunRecord> = (0..7)
        .map(|run| {
            let tp = rng.gen_range(0..10);
            RunRecord {
                run,
                seed: run as u64,
                train_windows: 1,
                test_windows: 1,
                epochs_run: 1,
                metrics: Metrics::from_counts(tp, 10 - tp, rng.gen_range(1..10), 3).unwrap(),
            }
        })
        .collect();
    let s = MetricsSummary::from_runs(records.clone()).unwrap();
    let f1: Vec<f64> = records.iter().map(|r| r.metrics.f1).collect();
    let mean = f1.iter().sum::<f64>() / 7.0;
    let std = (f1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 7.0).sqrt();
    assert!((s.f1.mean - mean).abs() < 1e-15);
    assert!((s.f1.std - std).abs() < 1e-15);
    assert_eq!(s.runs, 7);
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (5usize..40, 1usize..4).prop_flat_map(|(t, f)| {
        prop::collection::vec(-1e3f64..1e3, t * f)
            .prop_map(move |data| Matrix::from_vec(t, f, data).unwrap())
    })
}

proptest! {
    #[test]
    fn cusum_outputs_are_nonnegative(m in matrix_strategy(), f2 in any::<bool>()) {
        let mode = if f2 { CusumMode::F2 } else { CusumMode::F1 };
        let (p, n) = cusum(&m, &CusumParams::new(mode)).unwrap();
        prop_assert!(p.as_slice().iter().chain(n.as_slice()).all(|v| *v >= 0.0));
    }

    #[test]
    fn reversal_counts_bounded_by_index(m in matrix_strategy()) {
        let r = reversal_counts(&m);
        for t in 0..m.rows() {
            for c in 0..m.cols() {
                prop_assert!(r.get(t, c) <= t as f64);
            }
        }
    }

    #[test]
    fn conv_time_matches_direct_sum(x in prop::collection::vec(-10.0f64..10.0, 5..30)) {
        let kernel = [0.25, 0.5, 0.25];
        let out = conv_time(&Matrix::from_column(&x), &kernel, Padding::Replicate).unwrap().column(0);
        let n = x.len() as isize;
        for t in 0..x.len() {
            let at = |i: isize| x[i.clamp(0, n - 1) as usize];
            let t = t as isize;
            let expect = 0.25 * at(t - 1) + 0.5 * at(t) + 0.25 * at(t + 1);
            prop_assert!((out[t as usize] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_stack_is_finite_and_unit_range(m in matrix_strategy()) {
        let normalized = m.map_columns(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            c.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
        });
        let stack = build_feature_stack(&normalized, &FeatureConfig::new(FeatureSet::all())).unwrap();
        prop_assert_eq!(stack.channels().len(), 10);
        for (_, ch) in stack.channels() {
            prop_assert_eq!(ch.shape(), m.shape());
            prop_assert!(ch.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn stat_mean_within_range(values in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let s = Stat::of(&values).unwrap();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.std >= 0.0);
        prop_assert!(lo <= s.mean && s.mean <= hi);
    }
}
