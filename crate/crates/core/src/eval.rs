//! Metrics, repeated balanced-resampling experiments and horizon sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{balance_sample, slice_all, split, Pipeline, SkipCounts, WindowSpec};
use crate::error::{Error, Result};
use crate::featurize::FeatureConfig;
use crate::ingest::{DeviceHistory, Normalizer};
use crate::nn::{self, ModelConfig, Sample, TrainConfig};
use crate::seed::{self, stream};

/// Binary classification scores with failure (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::EmptyInput("metric inputs"));
        }
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Ok(Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
            accuracy: ratio(tp + tn, n),
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn get(&self, metric: MetricName) -> f64 {
        match metric {
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::Accuracy => self.accuracy,
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Any nonzero value counts as a failure prediction or label.
pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("predictions", labels.len(), predictions.len()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Metrics::from_counts(tp, fp, tn, fn_)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Precision,
    Recall,
    F1,
    Accuracy,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [Self::Precision, Self::Recall, Self::F1, Self::Accuracy];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Precision => "precision",
            Self::Recall => "recall",
            Self::F1 => "f1",
            Self::Accuracy => "accuracy",
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("statistic"));
        }
        let n = values.len() as f64;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Rounding in the sum can push the mean of equal values one ulp out.
        let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Outcome of one balanced-resample, split, train, test iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub train_windows: usize,
    pub test_windows: usize,
    pub epochs_run: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub accuracy: Stat,
    pub records: Vec<RunRecord>,
}

impl MetricsSummary {
    /// Summarizes `records` after sorting them by run index.
    pub fn from_runs(mut records: Vec<RunRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("run records"));
        }
        records.sort_by_key(|r| r.run);
        let stat =
            |m: MetricName| Stat::of(&records.iter().map(|r| r.metrics.get(m)).collect::<Vec<_>>());
        Ok(Self {
            runs: records.len(),
            precision: stat(MetricName::Precision)?,
            recall: stat(MetricName::Recall)?,
            f1: stat(MetricName::F1)?,
            accuracy: stat(MetricName::Accuracy)?,
            records,
        })
    }

    pub fn get(&self, metric: MetricName) -> Stat {
        match metric {
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::Accuracy => self.accuracy,
        }
    }
}

/// Everything that determines the outcome of [`repeated_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: FeatureConfig,
    pub window: WindowSpec,
    /// Layer sizes; input channels and length are filled in from the data.
    pub model: ModelConfig,
    /// The `seed` field is ignored; each run derives its own.
    pub train: TrainConfig,
    pub runs: usize,
    pub master_seed: u64,
    pub test_fraction: f64,
}

pub const DESK_RUNS: usize = 5;
pub const FULL_RUNS: usize = 50;

impl ExperimentConfig {
    pub fn new(features: FeatureConfig) -> Self {
        let window = WindowSpec::default();
        Self {
            features,
            window,
            model: ModelConfig::desk(1, window.window_length),
            train: TrainConfig::default(),
            runs: DESK_RUNS,
            master_seed: 0,
            test_fraction: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(
                "test_fraction",
                format!("{} not in (0, 1)", self.test_fraction),
            ));
        }
        self.window.validate()?;
        self.train.validate()
    }

    fn model_for(&self, attributes: usize) -> ModelConfig {
        ModelConfig {
            input_channels: attributes * self.features.features.len(),
            input_length: self.window.window_length,
            ..self.model
        }
    }
}

/// Seeds used by run `r`: `(run seed, balance, split, train)`.
pub fn run_seeds(master_seed: u64, run: usize) -> (u64, u64, u64, u64) {
    let s = seed::derive(master_seed, run as u64);
    (
        s,
        seed::derive(s, stream::BALANCE),
        seed::derive(s, stream::SPLIT),
        seed::derive(s, stream::TRAIN),
    )
}

/// Configuration plus the data-dependent facts of a finished experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config: ExperimentConfig,
    pub model: ModelConfig,
    pub devices: usize,
    pub windows: usize,
    pub failed_windows: usize,
    pub skips: SkipCounts,
    /// Normal devices are re-drawn every run, not only the split.
    pub resample_normals_each_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub manifest: ExperimentManifest,
    pub summary: MetricsSummary,
}

/// Runs `config.runs` independent iterations of balance, split, fit the
/// normalizer on the training windows, train, and score on the test windows.
/// Iterations run on the current rayon pool and are reassembled in run order.
pub fn repeated_experiment(
    histories: &[DeviceHistory],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    config.validate()?;
    let attributes = histories
        .first()
        .ok_or(Error::EmptyInput("device histories"))?
        .values
        .cols();
    let model = config.model_for(attributes);
    model.validate()?;
    let (windows, skips) = slice_all(histories, &config.window);

    let records = (0..config.runs)
        .into_par_iter()
        .map(|run| {
            let (run_seed, balance_seed, split_seed, train_seed) =
                run_seeds(config.master_seed, run);
            let balanced = balance_sample(&windows, balance_seed)?;
            let (train, test) = split(&balanced, config.test_fraction, split_seed)?;
            let pipeline = Pipeline {
                window: config.window,
                features: config.features.clone(),
                normalizer: Normalizer::fit_matrices(train.iter().map(|w| &w.values))?,
            };
            let train_samples = pipeline.samples(&train)?;
            let test_samples = pipeline.samples(&test)?;
            let net = nn::train(
                model,
                &TrainConfig {
                    seed: train_seed,
                    ..config.train
                },
                &train_samples,
            )?;
            let predictions = test_samples
                .iter()
                .map(|s| net.predict(&s.input).map(|p| p.0))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = test_samples.iter().map(|s| s.label).collect();
            Ok(RunRecord {
                run,
                seed: run_seed,
                train_windows: train.len(),
                test_windows: test.len(),
                epochs_run: net.meta.epochs_run,
                metrics: compute_metrics(&predictions, &labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentResult {
        manifest: ExperimentManifest {
            config: config.clone(),
            model,
            devices: histories.len(),
            failed_windows: windows.iter().filter(|w| w.failed).count(),
            windows: windows.len(),
            skips,
            resample_normals_each_run: true,
        },
        summary: MetricsSummary::from_runs(records)?,
    })
}

/// A single balanced train/test partition with its fitted pipeline.
#[derive(Debug, Clone)]
pub struct Holdout {
    pub pipeline: Pipeline,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub skips: SkipCounts,
}

/// Slices, balances and splits `histories`, then fits the normalizer on the
/// training windows. Uses the same seed streams as run 0 of
/// [`repeated_experiment`] keyed by `seed`.
pub fn holdout(
    histories: &[DeviceHistory],
    window: WindowSpec,
    features: &FeatureConfig,
    test_fraction: f64,
    seed: u64,
) -> Result<Holdout> {
    window.validate()?;
    let (windows, skips) = slice_all(histories, &window);
    let (_, balance_seed, split_seed, _) = run_seeds(seed, 0);
    let balanced = balance_sample(&windows, balance_seed)?;
    let (train, test) = split(&balanced, test_fraction, split_seed)?;
    let pipeline = Pipeline {
        window,
        features: features.clone(),
        normalizer: Normalizer::fit_matrices(train.iter().map(|w| &w.values))?,
    };
    Ok(Holdout {
        train: pipeline.samples(&train)?,
        test: pipeline.samples(&test)?,
        pipeline,
        skips,
    })
}

/// One [`repeated_experiment`] per horizon, windows re-sliced each time.
pub fn horizon_sweep(
    histories: &[DeviceHistory],
    config: &ExperimentConfig,
    horizons: &[usize],
) -> Result<Vec<ExperimentResult>> {
    if horizons.is_empty() {
        return Err(Error::EmptyInput("horizon list"));
    }
    horizons
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig {
                window: config.window.with_horizon(n),
                ..config.clone()
            };
            repeated_experiment(histories, &cfg)
        })
        .collect()
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature_set: String,
    pub horizon: usize,
    pub metric: MetricName,
    pub mean: f64,
    pub std: f64,
    #[serde(rename = "R")]
    pub runs: usize,
    pub seed: u64,
}

/// Result rows plus the manifests and per-run records behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
    pub experiments: Vec<ExperimentResult>,
}

/// Builds a report with one row per experiment and metric, in input order.
pub fn report(results: &[ExperimentResult]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::EmptyInput("experiment results"));
    }
    let rows = results
        .iter()
        .flat_map(|r| {
            MetricName::ALL.into_iter().map(move |m| {
                let stat = r.summary.get(m);
                ReportRow {
                    feature_set: r.manifest.config.features.features.to_string(),
                    horizon: r.manifest.config.window.horizon,
                    metric: m,
                    mean: stat.mean,
                    std: stat.std,
                    runs: r.summary.runs,
                    seed: r.manifest.config.master_seed,
                }
            })
        })
        .collect();
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        rows,
        experiments: results.to_vec(),
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text)?;
        if r.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::Version {
                what: "report",
                found: r.format_version,
                expected: REPORT_FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    /// Rebuilds the report from the stored per-run records alone.
    pub fn regenerate(&self) -> Result<Self> {
        let results = self
            .experiments
            .iter()
            .map(|e| {
                Ok(ExperimentResult {
                    manifest: e.manifest.clone(),
                    summary: MetricsSummary::from_runs(e.summary.records.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report(&results)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "feature_set",
            "horizon",
            "metric",
            "mean",
            "std",
            "R",
            "seed",
        ];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.feature_set.clone(),
                    r.horizon.to_string(),
                    r.metric.as_str().to_string(),
                    format!("{:.4}", r.mean),
                    format!("{:.4}", r.std),
                    r.runs.to_string(),
                    r.seed.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |fields: &[&str]| {
            let parts: Vec<String> = fields
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (f, w))| {
                    if i < 3 {
                        format!("{f:<w$}")
                    } else {
                        format!("{f:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &cells {
            line(&row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}
