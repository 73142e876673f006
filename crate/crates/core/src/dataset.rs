//! Horizon-shifted windows, balanced sampling and stratified splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{build_feature_stack, FeatureConfig, FeatureStack, BLUR_KERNEL};
use crate::ingest::{DeviceHistory, Normalizer};
use crate::matrix::Matrix;
use crate::nn::Sample;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Days per window, `T`.
    pub window_length: usize,
    /// Most recent days removed before windowing, `n`.
    pub horizon: usize,
    /// Devices observed for fewer days than this are excluded.
    pub turn_on_cutoff: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_length: 30,
            horizon: 0,
            turn_on_cutoff: 30,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < BLUR_KERNEL.len() {
            return Err(Error::invalid(
                "window_length",
                format!(
                    "{} is below the minimum of {}",
                    self.window_length,
                    BLUR_KERNEL.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn with_horizon(self, horizon: usize) -> Self {
        Self { horizon, ..self }
    }
}

/// A labeled, not yet featurized window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub serial_number: String,
    pub failed: bool,
    /// `window_length x F` raw attribute values.
    pub values: Matrix,
}

impl EventWindow {
    pub fn label(&self) -> usize {
        usize::from(self.failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    InsufficientHistory,
    TurnOnFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub insufficient_history: usize,
    pub turn_on: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.insufficient_history + self.turn_on
    }
}

/// Takes the `window_length` rows ending `horizon` rows before the last
/// snapshot. The same anchoring applies to failed and normal devices.
pub fn slice_window(
    history: &DeviceHistory,
    spec: &WindowSpec,
) -> std::result::Result<EventWindow, SkipReason> {
    let total = history.len();
    if (history.lifetime_days().max(0) as usize) < spec.turn_on_cutoff {
        return Err(SkipReason::TurnOnFailure);
    }
    if total < spec.window_length + spec.horizon {
        return Err(SkipReason::InsufficientHistory);
    }
    let end = total - spec.horizon;
    Ok(EventWindow {
        serial_number: history.serial_number.clone(),
        failed: history.failed,
        values: history.values.slice_rows(end - spec.window_length, end),
    })
}

pub fn slice_all(histories: &[DeviceHistory], spec: &WindowSpec) -> (Vec<EventWindow>, SkipCounts) {
    let mut skips = SkipCounts::default();
    let mut windows = Vec::with_capacity(histories.len());
    for h in histories {
        match slice_window(h, spec) {
            Ok(w) => windows.push(w),
            Err(SkipReason::InsufficientHistory) => skips.insufficient_history += 1,
            Err(SkipReason::TurnOnFailure) => skips.turn_on += 1,
        }
    }
    (windows, skips)
}

/// Keeps every failed window and an equally sized uniform random subset of
/// normal windows. Input order is preserved.
pub fn balance_sample(windows: &[EventWindow], seed: u64) -> Result<Vec<EventWindow>> {
    let (failed, normal): (Vec<usize>, Vec<usize>) =
        (0..windows.len()).partition(|&i| windows[i].failed);
    if failed.is_empty() {
        return Err(Error::Balance("no failed windows".into()));
    }
    if normal.len() < failed.len() {
        return Err(Error::Balance(format!(
            "{} normal windows cannot match {} failed",
            normal.len(),
            failed.len()
        )));
    }
    let mut rng = seed::rng(seed);
    let mut keep: BTreeSet<usize> = failed.into_iter().collect();
    let n = keep.len();
    keep.extend(
        index::sample(&mut rng, normal.len(), n)
            .into_iter()
            .map(|j| normal[j]),
    );
    Ok(keep.into_iter().map(|i| windows[i].clone()).collect())
}

/// Stratified split by label with whole devices on one side. Each class sends
/// `round(test_fraction * devices)` devices to the test side, at least one
/// and leaving at least one for training.
pub fn split(
    windows: &[EventWindow],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<EventWindow>, Vec<EventWindow>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(
            "test_fraction",
            format!("{test_fraction} not in (0, 1)"),
        ));
    }
    // serial -> window indices, grouped by class
    let mut groups: [BTreeMap<&str, Vec<usize>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (i, w) in windows.iter().enumerate() {
        groups[w.label()]
            .entry(w.serial_number.as_str())
            .or_default()
            .push(i);
    }
    if groups[0].keys().any(|s| groups[1].contains_key(s)) {
        return Err(Error::invalid(
            "windows",
            "a serial number carries both labels",
        ));
    }
    let mut rng = seed::rng(seed);
    let mut test_idx = BTreeSet::new();
    for (label, class) in groups.iter().enumerate() {
        let n = class.len();
        if n < 2 {
            return Err(Error::invalid(
                "windows",
                format!("class {label} has {n} devices; need at least 2 to split"),
            ));
        }
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut serials: Vec<&Vec<usize>> = class.values().collect();
        serials.shuffle(&mut rng);
        for idx in serials.into_iter().take(n_test) {
            test_idx.extend(idx.iter().copied());
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = windows
        .iter()
        .enumerate()
        .partition(|(i, _)| test_idx.contains(i));
    Ok((
        train.into_iter().map(|(_, w)| w.clone()).collect(),
        test.into_iter().map(|(_, w)| w.clone()).collect(),
    ))
}

/// Everything needed to turn a device history into network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub window: WindowSpec,
    pub features: FeatureConfig,
    pub normalizer: Normalizer,
}

impl Pipeline {
    pub fn stack(&self, window: &EventWindow) -> Result<FeatureStack> {
        let normalized = self.normalizer.apply(&window.values)?;
        build_feature_stack(&normalized, &self.features)
    }

    pub fn sample(&self, window: &EventWindow) -> Result<Sample> {
        Ok(Sample {
            input: self.stack(window)?.to_network_input(),
            label: window.label(),
        })
    }

    pub fn samples(&self, windows: &[EventWindow]) -> Result<Vec<Sample>> {
        windows.iter().map(|w| self.sample(w)).collect()
    }

    /// Network input channels: attributes times enabled channels.
    pub fn input_channels(&self) -> usize {
        self.normalizer.attribute_count() * self.features.features.len()
    }
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedWindow {
    pub serial_number: String,
    pub label: usize,
    pub stack: FeatureStack,
}

/// Featurized windows plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedDataset {
    pub format_version: u32,
    pub attributes: Vec<String>,
    pub pipeline: Pipeline,
    pub skips: SkipCounts,
    pub windows: Vec<DerivedWindow>,
}

impl DerivedDataset {
    pub fn build(
        attributes: Vec<String>,
        histories: &[DeviceHistory],
        window: WindowSpec,
        features: FeatureConfig,
    ) -> Result<Self> {
        window.validate()?;
        let normalizer = Normalizer::fit(histories)?;
        let pipeline = Pipeline {
            window,
            features,
            normalizer,
        };
        let (windows, skips) = slice_all(histories, &window);
        let windows = windows
            .iter()
            .map(|w| {
                Ok(DerivedWindow {
                    serial_number: w.serial_number.clone(),
                    label: w.label(),
                    stack: pipeline.stack(w)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            format_version: DATASET_FORMAT_VERSION,
            attributes,
            pipeline,
            skips,
            windows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: DerivedDataset = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if d.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                what: "dataset",
                found: d.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        Ok(d)
    }
}
