use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use log::info;
use rand::Rng;
use serde::Serialize;

use diskfail::dataset::{slice_window, DerivedDataset, Pipeline, SkipCounts};
use diskfail::ensemble::{fit_ensemble, EnsembleModel};
use diskfail::eval::{
    compute_metrics, holdout, horizon_sweep, repeated_experiment, report, ExperimentConfig,
    Metrics, Report,
};
use diskfail::featurize::render_image;
use diskfail::ingest::{assemble_histories, AttributeColumn, Corpus, SnapshotParser};
use diskfail::nn::{self, gradient_check, Classifier, GradCheckReport, ModelConfig, Sample};
use diskfail::seed;
use diskfail::synth::{generate_corpus, preset};

use crate::config::{resolve, FileConfig, Knobs, RunConfig};
use crate::{Cli, Command};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            bail!("jobs: must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("jobs: configuring worker pool")?;
    }
    let settings = |knobs: &Knobs| resolve(&file, knobs, cli.seed);
    let seed = cli.seed.or(file.seed).unwrap_or(0);

    match cli.command {
        Command::Ingest {
            inputs,
            out,
            attributes,
        } => ingest(&inputs, &out, &attributes)?,
        Command::Synth {
            preset: name,
            devices,
            failure_fraction,
            noise,
            out,
            csv,
        } => {
            let mut spec = preset(&name)?;
            spec.seed = seed;
            spec.devices = devices.unwrap_or(spec.devices);
            spec.failure_fraction = failure_fraction.unwrap_or(spec.failure_fraction);
            spec.noise = noise.unwrap_or(spec.noise);
            let corpus = generate_corpus(&spec)?;
            corpus.save(&out)?;
            if let Some(csv) = csv {
                corpus.write_csv(File::create(&csv).with_context(|| csv.display().to_string())?)?;
            }
            info!(
                "wrote {} devices to {}",
                corpus.histories.len(),
                out.display()
            );
        }
        Command::Derive { corpus, out, knobs } => {
            let cfg = settings(&knobs)?;
            let corpus = load_corpus(&corpus)?;
            let ds = DerivedDataset::build(
                corpus.attributes,
                &corpus.histories,
                cfg.window,
                cfg.primary_features(),
            )?;
            ds.save(&out)?;
            println!(
                "{} windows, {} channels; skipped {} short and {} turn-on devices",
                ds.windows.len(),
                ds.pipeline.input_channels(),
                ds.skips.insufficient_history,
                ds.skips.turn_on
            );
        }
        Command::Render {
            corpus,
            device,
            out_dir,
            knobs,
        } => render(&settings(&knobs)?, &corpus, &device, &out_dir)?,
        Command::Train {
            corpus,
            out,
            report,
            knobs,
        } => train(&settings(&knobs)?, &corpus, &out, report.as_deref())?,
        Command::Ensemble {
            corpus,
            out,
            k,
            report,
            knobs,
        } => {
            let mut cfg = settings(&knobs)?;
            cfg.k = k.unwrap_or(cfg.k);
            ensemble(&cfg, &corpus, &out, report.as_deref())?;
        }
        Command::Evaluate {
            corpus,
            out,
            csv,
            knobs,
        } => {
            let cfg = settings(&knobs)?;
            let corpus = load_corpus(&corpus)?;
            let results = cfg
                .feature_sets
                .iter()
                .map(|set| {
                    repeated_experiment(&corpus.histories, &experiment(&cfg, set.clone()))
                        .with_context(|| format!("feature set {set}"))
                })
                .collect::<Result<Vec<_>>>()?;
            emit_report(&report(&results)?, out.as_deref(), csv.as_deref())?;
        }
        Command::Sweep {
            corpus,
            horizons,
            out,
            csv,
            knobs,
        } => {
            let cfg = settings(&knobs)?;
            let horizons = if horizons.is_empty() {
                cfg.horizons.clone()
            } else {
                horizons
            };
            let corpus = load_corpus(&corpus)?;
            let mut results = Vec::new();
            for set in &cfg.feature_sets {
                results.extend(horizon_sweep(
                    &corpus.histories,
                    &experiment(&cfg, set.clone()),
                    &horizons,
                )?);
            }
            emit_report(&report(&results)?, out.as_deref(), csv.as_deref())?;
        }
        Command::Predict { model, corpus, out } => predict(&model, &corpus, out.as_deref())?,
        Command::Gradcheck { configs } => return gradcheck(seed, configs),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn ingest(inputs: &[PathBuf], out: &Path, attributes: &[String]) -> Result<()> {
    let columns = if attributes.is_empty() {
        AttributeColumn::default_set()
    } else {
        attributes
            .iter()
            .map(|a| a.parse().with_context(|| format!("attributes: {a:?}")))
            .collect::<Result<Vec<_>>>()?
    };
    let mut records = Vec::new();
    for path in inputs {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut parser = SnapshotParser::new(BufReader::new(f), &columns)
            .with_context(|| format!("reading header of {}", path.display()))?;
        records.extend(parser.by_ref());
        let report = parser.into_report();
        if report.rows_skipped > 0 {
            log::warn!(
                "{}: skipped {} malformed rows",
                path.display(),
                report.rows_skipped
            );
        }
        if !report.missing_columns.is_empty() {
            log::warn!(
                "{}: columns absent, values zero-filled: {}",
                path.display(),
                report.missing_columns.join(", ")
            );
        }
    }
    let (histories, report) = assemble_histories(records, columns.len())?;
    let corpus = Corpus::new(columns.iter().map(|c| c.to_string()).collect(), histories);
    corpus.save(out)?;
    println!(
        "{} devices ({} failed), {} duplicate rows, {} rows after failure dropped",
        report.devices,
        report.failed_devices,
        report.duplicate_rows,
        report.rows_after_failure_dropped
    );
    Ok(())
}

fn render(cfg: &RunConfig, corpus: &Path, device: &str, out_dir: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let history = corpus
        .histories
        .iter()
        .find(|h| h.serial_number == device)
        .with_context(|| format!("device: no device with serial number {device:?}"))?;
    let window = slice_window(history, &cfg.window).map_err(|reason| {
        anyhow::anyhow!("device: {device:?} has no usable window ({reason:?})")
    })?;
    let pipeline = Pipeline {
        window: cfg.window,
        features: cfg.primary_features(),
        normalizer: diskfail::Normalizer::fit(&corpus.histories)?,
    };
    fs::create_dir_all(out_dir)?;
    for (id, channel) in pipeline.stack(&window)?.channels() {
        let path = out_dir.join(format!("{device}_{}.pgm", id.name()));
        fs::write(&path, render_image(channel)).with_context(|| path.display().to_string())?;
    }
    Ok(())
}

fn experiment(cfg: &RunConfig, set: diskfail::FeatureSet) -> ExperimentConfig {
    ExperimentConfig {
        features: cfg.features(&set),
        window: cfg.window,
        model: cfg.model,
        train: cfg.train,
        runs: cfg.runs,
        master_seed: cfg.seed,
        test_fraction: cfg.test_fraction,
    }
}

fn emit_report(report: &Report, out: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        write_out(Some(p), &report.to_json()?)?;
    }
    if let Some(p) = csv {
        write_out(Some(p), &report.to_csv()?)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn model_for(cfg: &RunConfig, pipeline: &Pipeline) -> ModelConfig {
    ModelConfig {
        input_channels: pipeline.input_channels(),
        input_length: cfg.window.window_length,
        ..cfg.model
    }
}

fn score<F>(test: &[Sample], mut predict: F) -> Result<Metrics>
where
    F: FnMut(&[f64]) -> diskfail::Result<usize>,
{
    let preds = test
        .iter()
        .map(|s| predict(&s.input))
        .collect::<diskfail::Result<Vec<_>>>()?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    Ok(compute_metrics(&preds, &labels)?)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a RunConfig,
    model: ModelConfig,
    skips: SkipCounts,
    train_windows: usize,
    test_windows: usize,
    epochs_run: usize,
    loss_curve: &'a [f64],
    test_metrics: Metrics,
}

fn train(cfg: &RunConfig, corpus: &Path, out: &Path, report: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let split = holdout(
        &corpus.histories,
        cfg.window,
        &cfg.primary_features(),
        cfg.test_fraction,
        cfg.seed,
    )?;
    let model = model_for(cfg, &split.pipeline);
    let train_cfg = nn::TrainConfig {
        seed: seed::derive(cfg.seed, seed::stream::TRAIN),
        ..cfg.train
    };
    let mut net = nn::train(model, &train_cfg, &split.train)?;
    net.pipeline = Some(split.pipeline.clone());
    nn::save(&net, out).with_context(|| format!("writing model {}", out.display()))?;
    let metrics = score(&split.test, |x| net.predict(x).map(|p| p.0))?;
    let text = to_json(&TrainReport {
        config: cfg,
        model,
        skips: split.skips,
        train_windows: split.train.len(),
        test_windows: split.test.len(),
        epochs_run: net.meta.epochs_run,
        loss_curve: &net.meta.loss_curve,
        test_metrics: metrics,
    })?;
    write_out(report, &text)
}

#[derive(Serialize)]
struct EnsembleReport<'a> {
    config: &'a RunConfig,
    model: ModelConfig,
    k: usize,
    train_windows: usize,
    test_windows: usize,
    ensemble_accuracy: f64,
    member_accuracies: Vec<f64>,
    mean_member_accuracy: f64,
    test_metrics: Metrics,
}

fn ensemble(cfg: &RunConfig, corpus: &Path, out: &Path, report: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let split = holdout(
        &corpus.histories,
        cfg.window,
        &cfg.primary_features(),
        cfg.test_fraction,
        cfg.seed,
    )?;
    let model = model_for(cfg, &split.pipeline);
    let mut ens = fit_ensemble(cfg.k, model, &cfg.train, &split.train, cfg.seed)?;
    ens.pipeline = Some(split.pipeline.clone());
    ens.save(out)
        .with_context(|| format!("writing ensemble {}", out.display()))?;
    let member_accuracies = ens
        .members
        .iter()
        .map(|m| m.accuracy(&split.test))
        .collect::<diskfail::Result<Vec<_>>>()?;
    let text = to_json(&EnsembleReport {
        config: cfg,
        model,
        k: ens.len(),
        train_windows: split.train.len(),
        test_windows: split.test.len(),
        ensemble_accuracy: ens.accuracy(&split.test)?,
        mean_member_accuracy: member_accuracies.iter().sum::<f64>() / ens.len() as f64,
        member_accuracies,
        test_metrics: score(&split.test, |x| ens.vote_predict(x).map(|v| v.class))?,
    })?;
    write_out(report, &text)
}

enum Predictor {
    Single(Classifier),
    Ensemble(EnsembleModel),
}

impl Predictor {
    fn load(path: &Path) -> Result<(Self, Pipeline)> {
        let (p, pipeline) = if path.is_dir() {
            let e = EnsembleModel::load(path)
                .with_context(|| format!("loading ensemble {}", path.display()))?;
            let pipe = e.pipeline.clone();
            (Predictor::Ensemble(e), pipe)
        } else {
            let c = nn::load(path).with_context(|| format!("loading model {}", path.display()))?;
            let pipe = c.pipeline.clone();
            (Predictor::Single(c), pipe)
        };
        let pipeline = pipeline
            .context("model: file carries no preprocessing pipeline; retrain with `train`")?;
        Ok((p, pipeline))
    }

    /// `(class, failure share)`: vote proportion for ensembles, softmax
    /// probability for a single network.
    fn predict(&self, input: &[f64]) -> diskfail::Result<(usize, f64)> {
        match self {
            Predictor::Single(c) => c.predict(input).map(|(k, p)| (k, p[1])),
            Predictor::Ensemble(e) => e.vote_predict(input).map(|v| (v.class, v.proportions()[1])),
        }
    }
}

fn predict(model: &Path, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let (predictor, pipeline) = Predictor::load(model)?;
    let corpus = load_corpus(corpus)?;
    if corpus.attributes.len() != pipeline.normalizer.attribute_count() {
        bail!(
            "corpus: has {} attributes but the model expects {}",
            corpus.attributes.len(),
            pipeline.normalizer.attribute_count()
        );
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["serial_number", "failed", "predicted", "failure_share"])?;
    let mut skipped = 0;
    for h in &corpus.histories {
        let Ok(window) = slice_window(h, &pipeline.window) else {
            skipped += 1;
            continue;
        };
        let sample = pipeline.sample(&window)?;
        let (class, share) = predictor.predict(&sample.input)?;
        w.write_record([
            h.serial_number.clone(),
            u8::from(h.failed).to_string(),
            class.to_string(),
            format!("{share}"),
        ])?;
    }
    if skipped > 0 {
        log::warn!("{skipped} devices without a usable window were skipped");
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_out(out, std::str::from_utf8(&bytes)?)
}

/// A small random architecture drawn from `seed`.
fn random_config(seed: u64) -> ModelConfig {
    let mut rng = diskfail::seed::rng(seed);
    ModelConfig {
        input_channels: rng.gen_range(1..=4),
        input_length: rng.gen_range(10..=16),
        conv1_filters: rng.gen_range(2..=5),
        conv1_width: rng.gen_range(2..=4),
        conv2_filters: rng.gen_range(2..=5),
        conv2_width: rng.gen_range(2..=4),
        pool_width: rng.gen_range(2..=3),
        dense_width: rng.gen_range(3..=6),
        classes: 2,
    }
}

fn gradcheck(seed: u64, configs: usize) -> Result<ExitCode> {
    if configs == 0 {
        bail!("configs: must be at least 1");
    }
    let mut worst = 0.0f64;
    let mut reports: Vec<(ModelConfig, GradCheckReport)> = Vec::new();
    for i in 0..configs {
        let s = seed::derive(seed, i as u64);
        let c = random_config(s);
        let r = gradient_check(&c, s)?;
        worst = worst.max(r.max_relative_error);
        reports.push((c, r));
    }
    for (c, r) in &reports {
        println!(
            "config C={} T={} N1={} K1={} N2={} K2={} pool={} FC={}: checked {} of {} parameters ({} at kinks), max relative error {:.3e}",
            c.input_channels,
            c.input_length,
            c.conv1_filters,
            c.conv1_width,
            c.conv2_filters,
            c.conv2_width,
            c.pool_width,
            c.dense_width,
            r.checked,
            r.parameters,
            r.skipped_kinks,
            r.max_relative_error
        );
    }
    println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    Ok(if worst < GRADCHECK_TOLERANCE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
