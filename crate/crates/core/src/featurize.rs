//! Smart-feature channels derived from an event matrix.
//!
//! Every transform works column by column along the time axis and preserves
//! the `T x F` shape of its input:
//!
//! | channel            | transform                                            |
//! |--------------------|------------------------------------------------------|
//! | `EdgeChange`       | kernel `[-1, 1]`, causal: `x(t) - x(t-1)`             |
//! | `Smoothed`         | kernel `[0.25, 0.5, 0.25]`, centered, replicate pad   |
//! | `Blurred`          | kernel `[1, 4, 6, 4, 1] / 16`, centered, replicate pad |
//! | `CumulativeSum`    | running sum                                          |
//! | `ReversalCount`    | number of earlier samples strictly below `x(t)`      |
//! | `CusumF1*`/`F2*`   | one-sided accumulated deviation from the initial mean |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const EDGE_KERNEL: [f64; 2] = [-1.0, 1.0];
pub const EDGE_KERNEL_WIDE: [f64; 3] = [-1.0, 0.0, 1.0];
pub const SMOOTH_KERNEL: [f64; 3] = [0.25, 0.5, 0.25];
pub const BLUR_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureId {
    Original,
    EdgeChange,
    Smoothed,
    Blurred,
    CumulativeSum,
    ReversalCount,
    CusumF1Pos,
    CusumF1Neg,
    CusumF2Pos,
    CusumF2Neg,
}

impl FeatureId {
    pub const ALL: [FeatureId; 10] = [
        FeatureId::Original,
        FeatureId::EdgeChange,
        FeatureId::Smoothed,
        FeatureId::Blurred,
        FeatureId::CumulativeSum,
        FeatureId::ReversalCount,
        FeatureId::CusumF1Pos,
        FeatureId::CusumF1Neg,
        FeatureId::CusumF2Pos,
        FeatureId::CusumF2Neg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Original => "original",
            FeatureId::EdgeChange => "edge",
            FeatureId::Smoothed => "smoothed",
            FeatureId::Blurred => "blurred",
            FeatureId::CumulativeSum => "cumsum",
            FeatureId::ReversalCount => "reversal",
            FeatureId::CusumF1Pos => "cusum-f1-pos",
            FeatureId::CusumF1Neg => "cusum-f1-neg",
            FeatureId::CusumF2Pos => "cusum-f2-pos",
            FeatureId::CusumF2Neg => "cusum-f2-neg",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of enabled channels. `Original` is always a member.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FeatureSet(BTreeSet<FeatureId>);

impl FeatureSet {
    pub fn original() -> Self {
        Self(BTreeSet::from([FeatureId::Original]))
    }

    pub fn all() -> Self {
        Self(FeatureId::ALL.into_iter().collect())
    }

    /// All channels except smoothing, cumulative sum and CUSUM over raw values.
    pub fn all_but_weak() -> Self {
        let mut set = Self::all();
        for id in [
            FeatureId::Smoothed,
            FeatureId::CumulativeSum,
            FeatureId::CusumF1Pos,
            FeatureId::CusumF1Neg,
        ] {
            set.0.remove(&id);
        }
        set
    }

    pub fn with(mut self, ids: impl IntoIterator<Item = FeatureId>) -> Self {
        self.0.extend(ids);
        self
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.0.contains(&id)
    }

    /// Number of channels, `Original` included; never zero.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Enabled ids in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.0.iter().copied()
    }

    fn group(token: &str) -> Option<Vec<FeatureId>> {
        use FeatureId::*;
        Some(match token {
            "all" => FeatureId::ALL.to_vec(),
            "weak" => vec![Smoothed, CumulativeSum, CusumF1Pos, CusumF1Neg],
            "cusum-f1" => vec![CusumF1Pos, CusumF1Neg],
            "cusum-f2" => vec![CusumF2Pos, CusumF2Neg],
            "cusum" => vec![CusumF1Pos, CusumF1Neg, CusumF2Pos, CusumF2Neg],
            _ => {
                return FeatureId::ALL
                    .iter()
                    .find(|f| f.name() == token)
                    .map(|f| vec![*f])
            }
        })
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::all() {
            return f.write_str("all");
        }
        let names: Vec<_> = self.iter().map(FeatureId::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    /// Comma-separated channel or group names; a leading `-` removes.
    /// `all,-weak` is every channel except the weak ones.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self::original();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (remove, name) = match token.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, token),
            };
            let ids = Self::group(name).ok_or_else(|| {
                Error::invalid("feature set", format!("unknown feature {name:?}"))
            })?;
            for id in ids {
                if remove && id != FeatureId::Original {
                    set.0.remove(&id);
                } else if !remove {
                    set.0.insert(id);
                }
            }
        }
        Ok(set)
    }
}

impl From<FeatureSet> for String {
    fn from(set: FeatureSet) -> String {
        set.to_string()
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Window `[t - K + 1, t]`; samples before the start repeat `x(0)`.
    Causal,
    /// Window centered on `t`; samples past either end repeat the edge value.
    Replicate,
}

/// Applies `kernel` along the time axis of every column. The kernel is read
/// left to right as oldest to newest sample, so `[-1, 1]` with causal padding
/// gives `x(t) - x(t-1)`.
pub fn conv_time(matrix: &Matrix, kernel: &[f64], padding: Padding) -> Result<Matrix> {
    let t_len = matrix.rows();
    if kernel.len() < 2 {
        return Err(Error::invalid("kernel", "length must be at least 2"));
    }
    if kernel.len() > t_len {
        return Err(Error::invalid(
            "kernel",
            format!("length {} exceeds series length {t_len}", kernel.len()),
        ));
    }
    let k = kernel.len() as isize;
    let offset = match padding {
        Padding::Causal => k - 1,
        Padding::Replicate => (k - 1) / 2,
    };
    let last = t_len as isize - 1;
    Ok(matrix.map_columns(|x| {
        (0..t_len as isize)
            .map(|t| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[(t - offset + j as isize).clamp(0, last) as usize])
                    .sum()
            })
            .collect()
    }))
}

pub fn edge_change(matrix: &Matrix, kernel: EdgeKernel) -> Result<Matrix> {
    conv_time(matrix, kernel.taps(), Padding::Causal)
}

pub fn smoothed(matrix: &Matrix) -> Result<Matrix> {
    conv_time(matrix, &SMOOTH_KERNEL, Padding::Replicate)
}

pub fn blurred(matrix: &Matrix) -> Result<Matrix> {
    conv_time(matrix, &BLUR_KERNEL, Padding::Replicate)
}

pub fn cumulative_sum(matrix: &Matrix) -> Matrix {
    matrix.map_columns(|x| {
        x.iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    })
}

/// `out(t) = |{ i < t : x(i) < x(t) }|`, computed with a Fenwick tree over
/// value ranks.
pub fn reversal_counts(matrix: &Matrix) -> Matrix {
    matrix.map_columns(reversal_counts_series)
}

fn reversal_counts_series(x: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut tree = vec![0u32; sorted.len() + 1];
    x.iter()
        .map(|v| {
            // 1-based rank; prefix(rank - 1) counts strictly smaller values.
            let rank = sorted.partition_point(|s| s.total_cmp(v).is_lt()) + 1;
            let mut below = 0u32;
            let mut i = rank - 1;
            while i > 0 {
                below += tree[i];
                i &= i - 1;
            }
            let mut i = rank;
            while i < tree.len() {
                tree[i] += 1;
                i += i & i.wrapping_neg();
            }
            f64::from(below)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CusumMode {
    /// Accumulate deviations of the series itself.
    F1,
    /// Accumulate deviations of the daily change `x(t) - x(t-1)`, with `s(0) = 0`.
    F2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumParams {
    pub mode: CusumMode,
    /// Leading samples averaged into the target; `None` means
    /// `max(2, T / 4)` capped at `T`.
    pub init_period: Option<usize>,
    /// Slack `K`.
    pub slack: f64,
}

impl CusumParams {
    pub fn new(mode: CusumMode) -> Self {
        Self {
            mode,
            init_period: None,
            slack: 0.0,
        }
    }

    pub fn with_init_period(mut self, n: usize) -> Self {
        self.init_period = Some(n);
        self
    }

    pub fn resolved_init_period(&self, t_len: usize) -> Result<usize> {
        let n = self
            .init_period
            .unwrap_or_else(|| (t_len / 4).max(2).min(t_len));
        if n == 0 || n > t_len {
            return Err(Error::invalid(
                "cusum init_period",
                format!("{n} not in 1..={t_len}"),
            ));
        }
        Ok(n)
    }
}

/// Positive and negative accumulated deviations, never reset:
///
/// `g+(t) = max(0, g+(t-1) + s(t) - (target + K))`
/// `g-(t) = max(0, g-(t-1) - s(t) + (target - K))`
///
/// with both sums starting from zero and `target` the mean of `s` over the
/// initial period.
pub fn cusum(matrix: &Matrix, params: &CusumParams) -> Result<(Matrix, Matrix)> {
    let t_len = matrix.rows();
    let init = if t_len == 0 {
        0
    } else {
        params.resolved_init_period(t_len)?
    };
    let mut pos = Matrix::zeros(t_len, matrix.cols());
    let mut neg = Matrix::zeros(t_len, matrix.cols());
    for c in 0..matrix.cols() {
        let x = matrix.column(c);
        let s: Vec<f64> = match params.mode {
            CusumMode::F1 => x,
            CusumMode::F2 => std::iter::once(0.0)
                .chain(x.windows(2).map(|w| w[1] - w[0]))
                .take(t_len)
                .collect(),
        };
        if s.is_empty() {
            continue;
        }
        let target = s[..init].iter().sum::<f64>() / init as f64;
        let (mut gp, mut gn) = (0.0f64, 0.0f64);
        for (t, st) in s.iter().enumerate() {
            gp = (gp + st - (target + params.slack)).max(0.0);
            gn = (gn - st + (target - params.slack)).max(0.0);
            pos.set(t, c, gp);
            neg.set(t, c, gn);
        }
    }
    Ok((pos, neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKernel {
    /// `[-1, 1]`
    #[default]
    Adjacent,
    /// `[-1, 0, 1]`
    Wide,
}

impl EdgeKernel {
    pub fn taps(self) -> &'static [f64] {
        match self {
            EdgeKernel::Adjacent => &EDGE_KERNEL,
            EdgeKernel::Wide => &EDGE_KERNEL_WIDE,
        }
    }
}

/// Everything that decides how a window is turned into network channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub features: FeatureSet,
    #[serde(default)]
    pub edge_kernel: EdgeKernel,
    #[serde(default)]
    pub cusum_init_period: Option<usize>,
    #[serde(default)]
    pub cusum_slack: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::new(FeatureSet::all())
    }
}

impl FeatureConfig {
    pub fn new(features: FeatureSet) -> Self {
        Self {
            features,
            edge_kernel: EdgeKernel::Adjacent,
            cusum_init_period: None,
            cusum_slack: 0.0,
        }
    }

    fn cusum_params(&self, mode: CusumMode) -> CusumParams {
        CusumParams {
            mode,
            init_period: self.cusum_init_period,
            slack: self.cusum_slack,
        }
    }
}

/// Ordered channels sharing one `T x F` shape; `Original` comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStack {
    channels: Vec<(FeatureId, Matrix)>,
}

impl FeatureStack {
    pub fn channels(&self) -> &[(FeatureId, Matrix)] {
        &self.channels
    }

    pub fn ids(&self) -> Vec<FeatureId> {
        self.channels.iter().map(|(id, _)| *id).collect()
    }

    pub fn get(&self, id: FeatureId) -> Option<&Matrix> {
        self.channels.iter().find(|(c, _)| *c == id).map(|(_, m)| m)
    }

    pub fn window_length(&self) -> usize {
        self.channels[0].1.rows()
    }

    pub fn attribute_count(&self) -> usize {
        self.channels[0].1.cols()
    }

    /// Network input channel count: attributes times stacked channels.
    pub fn input_channels(&self) -> usize {
        self.attribute_count() * self.channels.len()
    }

    /// Flattens to `C x T` row-major, where input channel
    /// `c = stack_index * F + attribute`.
    pub fn to_network_input(&self) -> Vec<f64> {
        let t_len = self.window_length();
        let mut out = Vec::with_capacity(self.input_channels() * t_len);
        for (_, m) in &self.channels {
            for c in 0..m.cols() {
                out.extend((0..t_len).map(|t| m.get(t, c)));
            }
        }
        out
    }
}

/// Min-max rescales each column to `[0, 1]` over the window; constant columns
/// become zero.
fn rescale_columns(m: &Matrix) -> Matrix {
    m.map_columns(|x| {
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        if hi > lo {
            x.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; x.len()]
        }
    })
}

/// Builds the channel stack for one (already normalized) window. Derived
/// channels are rescaled per attribute over the window; `Original` is passed
/// through unchanged.
pub fn build_feature_stack(window: &Matrix, config: &FeatureConfig) -> Result<FeatureStack> {
    let mut channels = Vec::with_capacity(config.features.len());
    let mut f1 = None;
    let mut f2 = None;
    for id in config.features.iter() {
        let m = match id {
            FeatureId::Original => {
                channels.push((id, window.clone()));
                continue;
            }
            FeatureId::EdgeChange => edge_change(window, config.edge_kernel)?,
            FeatureId::Smoothed => smoothed(window)?,
            FeatureId::Blurred => blurred(window)?,
            FeatureId::CumulativeSum => cumulative_sum(window),
            FeatureId::ReversalCount => reversal_counts(window),
            FeatureId::CusumF1Pos | FeatureId::CusumF1Neg => {
                if f1.is_none() {
                    f1 = Some(cusum(window, &config.cusum_params(CusumMode::F1))?);
                }
                let (p, n) = f1.as_ref().unwrap();
                if id == FeatureId::CusumF1Pos {
                    p.clone()
                } else {
                    n.clone()
                }
            }
            FeatureId::CusumF2Pos | FeatureId::CusumF2Neg => {
                if f2.is_none() {
                    f2 = Some(cusum(window, &config.cusum_params(CusumMode::F2))?);
                }
                let (p, n) = f2.as_ref().unwrap();
                if id == FeatureId::CusumF2Pos {
                    p.clone()
                } else {
                    n.clone()
                }
            }
        };
        channels.push((id, rescale_columns(&m)));
    }
    Ok(FeatureStack { channels })
}

/// Binary PGM (P5) with time on the horizontal axis and one pixel row per
/// attribute. Each attribute is min-max scaled to `0..=255` independently,
/// rounding down; constant attributes render black.
pub fn render_image(matrix: &Matrix) -> Vec<u8> {
    let (t_len, attrs) = matrix.shape();
    let mut out = format!("P5\n{t_len} {attrs}\n255\n").into_bytes();
    out.reserve(t_len * attrs);
    for c in 0..attrs {
        let col = matrix.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in col {
            let px = if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            out.push(px);
        }
    }
    out
}
