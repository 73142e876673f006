//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags.
//!
//! Recognized file keys (all optional):
//!
//! ```toml
//! seed = 7
//! jobs = 2
//!
//! [window]
//! window_length = 30
//! horizon = 0
//! turn_on_cutoff = 30
//!
//! [features]
//! sets = ["all", "all,-weak"]
//! edge_kernel = "adjacent"      # or "wide"
//! cusum_init_period = 7
//! cusum_slack = 0.0
//!
//! [model]
//! scale = "desk"                # or "full"
//! conv1_filters = 32
//! conv1_width = 3
//! conv2_filters = 32
//! conv2_width = 3
//! pool_width = 2
//! dense_width = 32
//!
//! [train]
//! epochs = 30
//! batch_size = 32
//! learning_rate = 0.001
//! optimizer = "adam"            # or "sgd"
//! patience = 5                  # 0 disables early stopping
//! min_delta = 0.0001
//!
//! [experiment]
//! runs = 5
//! test_fraction = 0.25
//! horizons = [1, 10, 15]
//! k = 25
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use diskfail::featurize::{EdgeKernel, FeatureConfig, FeatureSet};
use diskfail::nn::{EarlyStop, ModelConfig, Optimizer, TrainConfig};
use diskfail::WindowSpec;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub window: WindowFile,
    #[serde(default)]
    pub features: FeaturesFile,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub train: TrainFile,
    #[serde(default)]
    pub experiment: ExperimentFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowFile {
    pub window_length: Option<usize>,
    pub horizon: Option<usize>,
    pub turn_on_cutoff: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesFile {
    pub sets: Option<Vec<String>>,
    pub edge_kernel: Option<String>,
    pub cusum_init_period: Option<usize>,
    pub cusum_slack: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub scale: Option<String>,
    pub conv1_filters: Option<usize>,
    pub conv1_width: Option<usize>,
    pub conv2_filters: Option<usize>,
    pub conv2_width: Option<usize>,
    pub pool_width: Option<usize>,
    pub dense_width: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<String>,
    pub patience: Option<usize>,
    pub min_delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub runs: Option<usize>,
    pub test_fraction: Option<f64>,
    pub horizons: Option<Vec<usize>>,
    pub k: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }
}

/// Flags shared by every subcommand that trains or evaluates.
#[derive(Debug, Clone, Default, Args)]
pub struct Knobs {
    /// Feature set, e.g. `all`, `original`, `all,-weak`, `edge,reversal`.
    /// Repeat to compare several sets.
    #[arg(long = "features", value_name = "SET")]
    pub features: Vec<String>,
    /// Window length T in days.
    #[arg(long)]
    pub window: Option<usize>,
    /// Most recent days removed before windowing.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Devices observed for fewer days are excluded.
    #[arg(long)]
    pub turn_on_cutoff: Option<usize>,
    /// `adjacent` ([-1, 1]) or `wide` ([-1, 0, 1]).
    #[arg(long)]
    pub edge_kernel: Option<String>,
    #[arg(long)]
    pub cusum_init_period: Option<usize>,
    #[arg(long)]
    pub cusum_slack: Option<f64>,
    /// `desk` (32/32/32) or `full` (256/256/160).
    #[arg(long)]
    pub scale: Option<String>,
    #[arg(long)]
    pub conv1_filters: Option<usize>,
    #[arg(long)]
    pub conv2_filters: Option<usize>,
    #[arg(long)]
    pub kernel_width: Option<usize>,
    #[arg(long)]
    pub pool_width: Option<usize>,
    #[arg(long)]
    pub dense_width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub window: WindowSpec,
    pub feature_sets: Vec<FeatureSet>,
    pub edge_kernel: EdgeKernel,
    pub cusum_init_period: Option<usize>,
    pub cusum_slack: f64,
    /// Layer sizes; input dimensions are filled in from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub runs: usize,
    pub test_fraction: f64,
    pub horizons: Vec<usize>,
    pub k: usize,
}

impl RunConfig {
    pub fn features(&self, set: &FeatureSet) -> FeatureConfig {
        FeatureConfig {
            features: set.clone(),
            edge_kernel: self.edge_kernel,
            cusum_init_period: self.cusum_init_period,
            cusum_slack: self.cusum_slack,
        }
    }

    /// The first requested feature set.
    pub fn primary_features(&self) -> FeatureConfig {
        self.features(&self.feature_sets[0])
    }
}

fn parse_edge_kernel(s: &str) -> Result<EdgeKernel> {
    Ok(match s {
        "adjacent" => EdgeKernel::Adjacent,
        "wide" => EdgeKernel::Wide,
        other => bail!("edge_kernel: unknown kernel {other:?} (expected adjacent or wide)"),
    })
}

fn parse_optimizer(s: &str) -> Result<Optimizer> {
    Ok(match s {
        "adam" => Optimizer::Adam,
        "sgd" => Optimizer::Sgd,
        other => bail!("optimizer: unknown optimizer {other:?} (expected adam or sgd)"),
    })
}

fn parse_scale(s: &str) -> Result<ModelConfig> {
    Ok(match s {
        "desk" => ModelConfig::desk(0, 0),
        "full" => ModelConfig::full(0, 0),
        other => bail!("scale: unknown scale {other:?} (expected desk or full)"),
    })
}

pub const DEFAULT_HORIZONS: [usize; 3] = [1, 10, 15];
pub const DEFAULT_K: usize = 25;

pub fn resolve(file: &FileConfig, knobs: &Knobs, seed: Option<u64>) -> Result<RunConfig> {
    let d = WindowSpec::default();
    let window = WindowSpec {
        window_length: knobs
            .window
            .or(file.window.window_length)
            .unwrap_or(d.window_length),
        horizon: knobs.horizon.or(file.window.horizon).unwrap_or(d.horizon),
        turn_on_cutoff: knobs
            .turn_on_cutoff
            .or(file.window.turn_on_cutoff)
            .unwrap_or(d.turn_on_cutoff),
    };

    let set_strings: Vec<String> = if !knobs.features.is_empty() {
        knobs.features.clone()
    } else {
        file.features
            .sets
            .clone()
            .unwrap_or_else(|| vec!["all".into()])
    };
    if set_strings.is_empty() {
        bail!("features: at least one feature set is required");
    }
    let feature_sets = set_strings
        .iter()
        .map(|s| {
            s.parse::<FeatureSet>()
                .with_context(|| format!("features: {s:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let edge_kernel = match knobs
        .edge_kernel
        .as_ref()
        .or(file.features.edge_kernel.as_ref())
    {
        Some(s) => parse_edge_kernel(s)?,
        None => EdgeKernel::Adjacent,
    };

    let base = match knobs.scale.as_ref().or(file.model.scale.as_ref()) {
        Some(s) => parse_scale(s)?,
        None => ModelConfig::desk(0, 0),
    };
    let m = &file.model;
    let model = ModelConfig {
        conv1_filters: knobs
            .conv1_filters
            .or(m.conv1_filters)
            .unwrap_or(base.conv1_filters),
        conv1_width: knobs
            .kernel_width
            .or(m.conv1_width)
            .unwrap_or(base.conv1_width),
        conv2_filters: knobs
            .conv2_filters
            .or(m.conv2_filters)
            .unwrap_or(base.conv2_filters),
        conv2_width: knobs
            .kernel_width
            .or(m.conv2_width)
            .unwrap_or(base.conv2_width),
        pool_width: knobs.pool_width.or(m.pool_width).unwrap_or(base.pool_width),
        dense_width: knobs
            .dense_width
            .or(m.dense_width)
            .unwrap_or(base.dense_width),
        ..base
    };

    let t = &file.train;
    let td = TrainConfig::default();
    let td_stop = td.early_stop.expect("default has early stopping");
    let patience = knobs.patience.or(t.patience).unwrap_or(td_stop.patience);
    let seed = seed.or(file.seed).unwrap_or(0);
    let train = TrainConfig {
        epochs: knobs.epochs.or(t.epochs).unwrap_or(td.epochs),
        batch_size: knobs.batch_size.or(t.batch_size).unwrap_or(td.batch_size),
        learning_rate: knobs
            .learning_rate
            .or(t.learning_rate)
            .unwrap_or(td.learning_rate),
        optimizer: match knobs.optimizer.as_ref().or(t.optimizer.as_ref()) {
            Some(s) => parse_optimizer(s)?,
            None => td.optimizer,
        },
        seed,
        early_stop: (patience > 0).then_some(EarlyStop {
            patience,
            min_delta: t.min_delta.unwrap_or(td_stop.min_delta),
        }),
    };
    train.validate()?;
    window.validate()?;

    let e = &file.experiment;
    Ok(RunConfig {
        seed,
        window,
        feature_sets,
        edge_kernel,
        cusum_init_period: knobs.cusum_init_period.or(file.features.cusum_init_period),
        cusum_slack: knobs
            .cusum_slack
            .or(file.features.cusum_slack)
            .unwrap_or(0.0),
        model,
        train,
        runs: knobs.runs.or(e.runs).unwrap_or(diskfail::eval::DESK_RUNS),
        test_fraction: knobs.test_fraction.or(e.test_fraction).unwrap_or(0.25),
        horizons: e
            .horizons
            .clone()
            .unwrap_or_else(|| DEFAULT_HORIZONS.to_vec()),
        k: e.k.unwrap_or(DEFAULT_K),
    })
}
