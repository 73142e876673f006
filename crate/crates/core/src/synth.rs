//! Seeded synthetic telemetry with injected failure signatures.
//!
//! Every device gets a per-attribute baseline level, a sinusoidal oscillation
//! and uniform noise. Failed devices additionally carry one or more
//! signatures (step change, linear trend, rare spikes) on a seeded subset of
//! attributes. Normal devices never carry a signature.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AttributeColumn, Corpus, DeviceHistory, DEFAULT_SMART_IDS};
use crate::matrix::Matrix;
use crate::seed::{self, stream};

/// Step of `magnitude` starting `lead_time` days before the failure day and
/// persisting to the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbruptChange {
    pub magnitude: f64,
    pub lead_time: usize,
}

/// Linear drift of `slope` per day. Starts `onset` days before the failure
/// day, or on the first day when `onset` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub onset: Option<usize>,
}

/// Independent per-day spikes of `magnitude` with probability `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RareEvents {
    pub rate: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureMix {
    /// Every enabled signature on every failed device.
    All,
    /// A seeded nonempty subset of the enabled signatures per failed device.
    Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub devices: usize,
    pub failure_fraction: f64,
    /// Inclusive range of observed days per device.
    pub min_days: usize,
    pub max_days: usize,
    pub attributes: usize,
    /// Attributes carrying failure signatures, drawn per device.
    pub signature_attributes: usize,
    /// Half-width of the uniform noise.
    pub noise: f64,
    /// Per-device baseline levels are uniform on `[0, baseline_spread]`.
    pub baseline_spread: f64,
    pub oscillation: Option<Oscillation>,
    pub abrupt: Option<AbruptChange>,
    pub trend: Option<Trend>,
    pub rare_events: Option<RareEvents>,
    pub mix: SignatureMix,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            devices: 400,
            failure_fraction: 0.4,
            min_days: 60,
            max_days: 120,
            attributes: 6,
            signature_attributes: 3,
            noise: 1.0,
            baseline_spread: 10.0,
            oscillation: None,
            abrupt: None,
            trend: None,
            rare_events: None,
            mix: SignatureMix::All,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::invalid("devices", "must be at least 1"));
        }
        if !(self.failure_fraction > 0.0 && self.failure_fraction < 1.0) {
            return Err(Error::invalid(
                "failure_fraction",
                format!("{} not in (0, 1)", self.failure_fraction),
            ));
        }
        if self.min_days < 2 || self.min_days > self.max_days {
            return Err(Error::invalid(
                "min_days",
                format!(
                    "need 2 <= min_days <= max_days, got {}..{}",
                    self.min_days, self.max_days
                ),
            ));
        }
        if self.attributes == 0 || self.attributes > DEFAULT_SMART_IDS.len() {
            return Err(Error::invalid(
                "attributes",
                format!("must be in 1..={}", DEFAULT_SMART_IDS.len()),
            ));
        }
        if self.signature_attributes == 0 || self.signature_attributes > self.attributes {
            return Err(Error::invalid(
                "signature_attributes",
                format!("must be in 1..={}", self.attributes),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise", "must be finite and nonnegative"));
        }
        if !(self.baseline_spread >= 0.0 && self.baseline_spread.is_finite()) {
            return Err(Error::invalid(
                "baseline_spread",
                "must be finite and nonnegative",
            ));
        }
        if let Some(o) = self.oscillation {
            if o.period.is_nan() || o.period <= 0.0 {
                return Err(Error::invalid("oscillation.period", "must be positive"));
            }
        }
        if let Some(a) = self.abrupt {
            if a.lead_time >= self.min_days {
                return Err(Error::invalid(
                    "abrupt.lead_time",
                    format!(
                        "{} must be below the shortest lifetime {}",
                        a.lead_time, self.min_days
                    ),
                ));
            }
        }
        if let Some(Trend {
            onset: Some(onset), ..
        }) = self.trend
        {
            if onset >= self.min_days {
                return Err(Error::invalid(
                    "trend.onset",
                    format!(
                        "{onset} must be below the shortest lifetime {}",
                        self.min_days
                    ),
                ));
            }
        }
        if let Some(r) = self.rare_events {
            if !(0.0..=1.0).contains(&r.rate) {
                return Err(Error::invalid("rare_events.rate", "must be in [0, 1]"));
            }
        }
        if self.signature_count() == 0 {
            return Err(Error::invalid("spec", "no failure signature enabled"));
        }
        Ok(())
    }

    pub fn failed_devices(&self) -> usize {
        ((self.failure_fraction * self.devices as f64).round() as usize).clamp(1, self.devices)
    }

    fn signature_count(&self) -> usize {
        usize::from(self.abrupt.is_some())
            + usize::from(self.trend.is_some())
            + usize::from(self.rare_events.is_some())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        DEFAULT_SMART_IDS[..self.attributes]
            .iter()
            .map(|id| AttributeColumn::raw(*id).to_string())
            .collect()
    }
}

/// Builds the corpus described by `spec`. Device `i` draws from its own
/// stream, so the output does not depend on generation order.
pub fn generate_corpus(spec: &ScenarioSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(spec.seed, stream::BALANCE));
    let failed: Vec<bool> = {
        let mut flags = vec![false; spec.devices];
        for i in index::sample(&mut rng, spec.devices, spec.failed_devices()) {
            flags[i] = true;
        }
        flags
    };
    let device_stream = seed::derive(spec.seed, stream::DEVICE);
    let histories = failed
        .iter()
        .enumerate()
        .map(|(i, &f)| generate_device(spec, i, f, seed::derive(device_stream, i as u64)))
        .collect();
    Ok(Corpus::new(spec.attribute_names(), histories))
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

fn generate_device(spec: &ScenarioSpec, index: usize, failed: bool, seed: u64) -> DeviceHistory {
    let mut rng = seed::rng(seed);
    let days = rng.gen_range(spec.min_days..=spec.max_days);
    let f = spec.attributes;
    let mut values = Matrix::zeros(days, f);
    for a in 0..f {
        let base = rng.gen_range(0.0..=spec.baseline_spread);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for t in 0..days {
            let mut v = base;
            if let Some(o) = spec.oscillation {
                v += o.amplitude * (std::f64::consts::TAU * t as f64 / o.period + phase).sin();
            }
            if spec.noise > 0.0 {
                v += rng.gen_range(-spec.noise..=spec.noise);
            }
            values.set(t, a, v);
        }
    }
    if failed {
        inject(spec, &mut values, &mut rng);
    }
    DeviceHistory {
        serial_number: format!("SYN{index:06}"),
        model: "SYNTH".into(),
        dates: (0..days)
            .map(|t| start_date() + Duration::days(t as i64))
            .collect(),
        values,
        failed,
    }
}

fn inject<R: Rng>(spec: &ScenarioSpec, values: &mut Matrix, rng: &mut R) {
    let days = values.rows();
    let last = days - 1;
    let mut enabled = [
        spec.abrupt.is_some(),
        spec.trend.is_some(),
        spec.rare_events.is_some(),
    ];
    if spec.mix == SignatureMix::Subset {
        let on: Vec<usize> = (0..3).filter(|&i| enabled[i]).collect();
        // Nonempty subset: a uniform nonzero bitmask over the enabled kinds.
        let mask = rng.gen_range(1..(1u32 << on.len()));
        enabled = [false; 3];
        for (bit, &kind) in on.iter().enumerate() {
            enabled[kind] = mask & (1 << bit) != 0;
        }
    }
    let mut attrs = index::sample(rng, spec.attributes, spec.signature_attributes).into_vec();
    attrs.sort_unstable();
    for a in attrs {
        if let (true, Some(step)) = (enabled[0], spec.abrupt) {
            for t in last - step.lead_time..days {
                values.set(t, a, values.get(t, a) + step.magnitude);
            }
        }
        if let (true, Some(trend)) = (enabled[1], spec.trend) {
            let start = trend.onset.map_or(0, |o| last - o);
            for t in start..days {
                values.set(t, a, values.get(t, a) + trend.slope * (t - start) as f64);
            }
        }
        if let (true, Some(spikes)) = (enabled[2], spec.rare_events) {
            for t in 0..days {
                if rng.gen_bool(spikes.rate) {
                    values.set(t, a, values.get(t, a) + spikes.magnitude);
                }
            }
        }
    }
}

/// Named scenarios. Names are stable.
pub fn scenario_presets() -> BTreeMap<&'static str, ScenarioSpec> {
    let mut m = BTreeMap::new();
    // Pointwise levels of both classes overlap; failed devices differ only by
    // a slow drift that is small against the noise on any single day.
    m.insert(
        "noisy-trend",
        ScenarioSpec {
            noise: 2.0,
            baseline_spread: 10.0,
            oscillation: Some(Oscillation {
                amplitude: 1.0,
                period: 7.0,
            }),
            trend: Some(Trend {
                slope: 0.08,
                onset: None,
            }),
            ..ScenarioSpec::default()
        },
    );
    // A step five days before failure on top of a ramp that begins twenty
    // days out, so evidence thins as the horizon grows.
    m.insert(
        "abrupt-near-failure",
        ScenarioSpec {
            noise: 1.0,
            baseline_spread: 10.0,
            oscillation: Some(Oscillation {
                amplitude: 0.5,
                period: 7.0,
            }),
            abrupt: Some(AbruptChange {
                magnitude: 4.0,
                lead_time: 5,
            }),
            trend: Some(Trend {
                slope: 0.15,
                onset: Some(20),
            }),
            ..ScenarioSpec::default()
        },
    );
    // A lifetime-long slight elevation plus occasional spikes, visible in the
    // running total rather than on any one day.
    m.insert(
        "wearout",
        ScenarioSpec {
            noise: 1.0,
            baseline_spread: 10.0,
            trend: Some(Trend {
                slope: 0.02,
                onset: None,
            }),
            rare_events: Some(RareEvents {
                rate: 0.05,
                magnitude: 3.0,
            }),
            mix: SignatureMix::Subset,
            ..ScenarioSpec::default()
        },
    );
    m
}

pub fn preset(name: &str) -> Result<ScenarioSpec> {
    scenario_presets().remove(name).ok_or_else(|| {
        Error::invalid(
            "preset",
            format!(
                "unknown preset {name:?}; known: {}",
                scenario_presets()
                    .keys()
                    .copied()
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        )
    })
}
