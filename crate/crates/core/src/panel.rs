//! Multivariate KPI panels and their preprocessing.
//!
//! A [`TimeSeriesPanel`] holds `D` indicator channels sampled on a uniform
//! grid of `T` timestamps. Values are stored channel-major because every
//! downstream stage (ARX fitting, residual evaluation, causal discovery)
//! walks one channel at a time.
//!
//! Preprocessing is a short, fixed chain: [`impute_missing`], [`smooth`] and
//! [`standardize`]. Each step preserves `T`, `D`, channel order and
//! timestamps, and the original missing-cell mask travels along for
//! provenance.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::FORMAT_VERSION;

/// Standard deviations at or below this are treated as zero.
pub const CONSTANT_STD_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesPanel {
    timestamps: Vec<i64>,
    channel_names: Vec<String>,
    values: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
}

impl TimeSeriesPanel {
    /// Builds a panel from channel-major values. `NaN` cells are recorded
    /// as missing.
    pub fn new(timestamps: Vec<i64>, channel_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let missing = values
            .iter()
            .map(|col| col.iter().map(|v| v.is_nan()).collect())
            .collect();
        Self::with_mask(timestamps, channel_names, values, missing)
    }

    /// Builds a panel on the grid `0, 1, ..., T-1` seconds.
    pub fn from_columns(channel_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = values.first().map_or(0, Vec::len);
        Self::new((0..t as i64).collect(), channel_names, values)
    }

    fn with_mask(
        timestamps: Vec<i64>,
        channel_names: Vec<String>,
        values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if timestamps.is_empty() {
            return Err(RcaError::EmptyInput);
        }
        if channel_names.is_empty() {
            return Err(RcaError::MalformedInput("panel has no channels".into()));
        }
        if values.len() != channel_names.len() || missing.len() != channel_names.len() {
            return Err(RcaError::MalformedInput(format!(
                "{} channel names but {} value columns",
                channel_names.len(),
                values.len()
            )));
        }
        for (name, (col, mask)) in channel_names.iter().zip(values.iter().zip(&missing)) {
            if col.len() != timestamps.len() || mask.len() != timestamps.len() {
                return Err(RcaError::MalformedInput(format!(
                    "channel `{name}` has {} samples, expected {}",
                    col.len(),
                    timestamps.len()
                )));
            }
        }
        check_unique(&channel_names)?;
        check_uniform(&timestamps)?;
        Ok(Self { timestamps, channel_names, values, missing })
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Number of channels `D`.
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[Vec<bool>] {
        &self.missing
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.values[c][t]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().flatten().filter(|m| **m).count()
    }

    /// True when any cell currently holds `NaN`.
    pub fn has_gaps(&self) -> bool {
        self.values.iter().flatten().any(|v| v.is_nan())
    }

    /// Replaces the values, keeping timestamps, names and the provenance mask.
    pub fn with_values(&self, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_mask(self.timestamps.clone(), self.channel_names.clone(), values, self.missing.clone())
    }

    /// Reorders (or subsets) channels by name.
    pub fn select_channels(&self, names: &[String]) -> Result<Self> {
        let mut values = Vec::with_capacity(names.len());
        let mut missing = Vec::with_capacity(names.len());
        for name in names {
            let c = self
                .channel_index(name)
                .ok_or_else(|| RcaError::ChannelMismatch(format!("panel has no channel `{name}`")))?;
            values.push(self.values[c].clone());
            missing.push(self.missing[c].clone());
        }
        Self::with_mask(self.timestamps.clone(), names.to_vec(), values, missing)
    }

    /// Keeps only the rows in `range`.
    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(RcaError::InvalidWindow(format!("rows {range:?} outside 0..{}", self.len())));
        }
        Self::with_mask(
            self.timestamps[range.clone()].to_vec(),
            self.channel_names.clone(),
            self.values.iter().map(|c| c[range.clone()].to_vec()).collect(),
            self.missing.iter().map(|c| c[range.clone()].to_vec()).collect(),
        )
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(RcaError::MalformedInput(format!("duplicate channel name `{name}`")));
        }
    }
    Ok(())
}

fn check_increasing(timestamps: &[i64]) -> Result<()> {
    if let Some(w) = timestamps.windows(2).find(|w| w[1] <= w[0]) {
        return Err(RcaError::MalformedInput(format!(
            "timestamps not strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn check_uniform(timestamps: &[i64]) -> Result<()> {
    check_increasing(timestamps)?;
    if timestamps.len() > 2 {
        let step = timestamps[1] - timestamps[0];
        if timestamps.windows(2).any(|w| w[1] - w[0] != step) {
            return Err(RcaError::MalformedInput("timestamps are not on a uniform grid".into()));
        }
    }
    Ok(())
}

/// Reads a panel from CSV text: a header `timestamp,<name1>,...,<nameD>`,
/// UNIX-epoch-second timestamps, and empty fields for missing samples.
///
/// Strictly increasing but irregular timestamps are snapped onto a uniform
/// grid (median step, nearest sample).
pub fn load_panel<R: Read>(source: R) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut fields = headers.iter();
    match fields.next() {
        Some(h) if h.eq_ignore_ascii_case("timestamp") => {}
        other => {
            return Err(RcaError::MalformedInput(format!(
                "first column must be `timestamp`, found {other:?}"
            )))
        }
    }
    let names: Vec<String> = fields.map(str::to_owned).collect();
    if names.is_empty() {
        return Err(RcaError::MalformedInput("no channel columns".into()));
    }
    check_unique(&names)?;

    let mut timestamps = Vec::new();
    let mut values = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() + 1 {
            return Err(RcaError::MalformedInput(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                record.len(),
                names.len() + 1
            )));
        }
        let ts = record[0]
            .parse::<i64>()
            .or_else(|_| record[0].parse::<f64>().map(|v| v.round() as i64))
            .map_err(|_| RcaError::MalformedInput(format!("row {}: bad timestamp `{}`", row + 1, &record[0])))?;
        timestamps.push(ts);
        for (c, field) in record.iter().skip(1).enumerate() {
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| {
                    RcaError::MalformedInput(format!("row {}: bad value `{field}` in `{}`", row + 1, names[c]))
                })?
            };
            values[c].push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(RcaError::EmptyInput);
    }
    check_increasing(&timestamps)?;
    if check_uniform(&timestamps).is_err() {
        let (grid, resampled) = resample_nearest(&timestamps, &values);
        return TimeSeriesPanel::new(grid, names, resampled);
    }
    TimeSeriesPanel::new(timestamps, names, values)
}

/// Writes a panel in the format read by [`load_panel`]. Values use the
/// shortest decimal form that parses back to the same `f64`.
pub fn save_panel<W: Write>(panel: &TimeSeriesPanel, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["timestamp".to_owned()];
    header.extend(panel.channel_names.iter().cloned());
    writer.write_record(&header)?;
    let mut row = Vec::with_capacity(panel.n_channels() + 1);
    for t in 0..panel.len() {
        row.clear();
        row.push(panel.timestamps[t].to_string());
        for col in &panel.values {
            let v = col[t];
            row.push(if v.is_nan() { String::new() } else { format!("{v:?}") });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

fn resample_nearest(timestamps: &[i64], values: &[Vec<f64>]) -> (Vec<i64>, Vec<Vec<f64>>) {
    let mut steps: Vec<i64> = timestamps.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_unstable();
    let step = steps[steps.len() / 2].max(1);
    let first = timestamps[0];
    let last = *timestamps.last().unwrap();
    let grid: Vec<i64> = (0..=((last - first) / step)).map(|i| first + i * step).collect();
    let mut src = 0;
    let picks: Vec<usize> = grid
        .iter()
        .map(|&g| {
            while src + 1 < timestamps.len() && (timestamps[src + 1] - g).abs() <= (timestamps[src] - g).abs() {
                src += 1;
            }
            src
        })
        .collect();
    let resampled = values.iter().map(|col| picks.iter().map(|&i| col[i]).collect()).collect();
    (grid, resampled)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMethod {
    /// Linear interpolation between observed neighbours; edges hold the
    /// nearest observed value.
    #[default]
    LinearInterpolate,
    /// Forward fill; leading gaps take the first observed value.
    HoldLast,
    /// The mean of the channel's observed samples.
    ChannelMean,
}

/// Fills every `NaN` cell. Observed cells are untouched and the missing
/// mask is carried over unchanged.
pub fn impute_missing(panel: &TimeSeriesPanel, method: ImputeMethod) -> Result<TimeSeriesPanel> {
    let mut out = Vec::with_capacity(panel.n_channels());
    for (name, col) in panel.channel_names.iter().zip(&panel.values) {
        let observed: Vec<usize> = (0..col.len()).filter(|&t| !col[t].is_nan()).collect();
        if observed.is_empty() {
            return Err(RcaError::DegenerateChannel(name.clone()));
        }
        if observed.len() == col.len() {
            out.push(col.clone());
            continue;
        }
        let filled = match method {
            ImputeMethod::LinearInterpolate => interpolate(col, &observed),
            ImputeMethod::HoldLast => hold_last(col, observed[0]),
            ImputeMethod::ChannelMean => {
                let mean = observed.iter().map(|&t| col[t]).sum::<f64>() / observed.len() as f64;
                col.iter().map(|&v| if v.is_nan() { mean } else { v }).collect()
            }
        };
        out.push(filled);
    }
    panel.with_values(out)
}

fn interpolate(col: &[f64], observed: &[usize]) -> Vec<f64> {
    let mut out = col.to_vec();
    let first = observed[0];
    let last = *observed.last().unwrap();
    for v in &mut out[..first] {
        *v = col[first];
    }
    for v in &mut out[last + 1..] {
        *v = col[last];
    }
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for (t, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (t - a) as f64 / span;
            *v = col[a] * (1.0 - w) + col[b] * w;
        }
    }
    out
}

fn hold_last(col: &[f64], first_observed: usize) -> Vec<f64> {
    let mut last = col[first_observed];
    col.iter()
        .map(|&v| {
            if v.is_nan() {
                last
            } else {
                last = v;
                v
            }
        })
        .collect()
}

/// Centered moving average. The window shrinks at the series edges, and a
/// window of one returns the panel unchanged.
pub fn smooth(panel: &TimeSeriesPanel, window: usize) -> Result<TimeSeriesPanel> {
    if window == 0 || window > panel.len() {
        return Err(RcaError::InvalidWindow(format!(
            "smoothing window {window} must lie in 1..={}",
            panel.len()
        )));
    }
    if window == 1 {
        return Ok(panel.clone());
    }
    let back = (window - 1) / 2;
    let ahead = window / 2;
    let t_len = panel.len();
    let values = panel
        .values
        .iter()
        .map(|col| {
            (0..t_len)
                .map(|t| {
                    let lo = t.saturating_sub(back);
                    let hi = (t + ahead).min(t_len - 1);
                    col[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect()
        })
        .collect();
    panel.with_values(values)
}

/// Per-channel location and scale estimated on a training window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training-window std is zero.
    pub constant: Vec<bool>,
    pub train_range: Range<usize>,
}

impl ChannelStats {
    pub fn estimate(panel: &TimeSeriesPanel, train_range: Range<usize>) -> Result<Self> {
        if train_range.is_empty() || train_range.end > panel.len() {
            return Err(RcaError::InvalidWindow(format!(
                "training range {train_range:?} must be a nonempty part of 0..{}",
                panel.len()
            )));
        }
        let n = train_range.len() as f64;
        let mut mean = Vec::with_capacity(panel.n_channels());
        let mut std = Vec::with_capacity(panel.n_channels());
        for col in &panel.values {
            let xs = &col[train_range.clone()];
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        let constant = std.iter().zip(&mean).map(|(s, m)| *s <= CONSTANT_STD_EPS * m.abs().max(1.0)).collect();
        Ok(Self { channel_names: panel.channel_names.clone(), mean, std, constant, train_range })
    }

    pub fn is_constant(&self, c: usize) -> bool {
        self.constant[c]
    }

    /// Applies `(x - mean) / std`; constant channels become all zeros.
    pub fn apply(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        self.check_channels(panel)?;
        let values = panel
            .values
            .iter()
            .enumerate()
            .map(|(c, col)| {
                if self.constant[c] {
                    vec![0.0; col.len()]
                } else {
                    col.iter().map(|x| (x - self.mean[c]) / self.std[c]).collect()
                }
            })
            .collect();
        panel.with_values(values)
    }

    /// Maps standardized values back to the original units. Constant
    /// channels come back as their training mean.
    pub fn invert(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        self.check_channels(panel)?;
        let values = panel
            .values
            .iter()
            .enumerate()
            .map(|(c, col)| {
                if self.constant[c] {
                    vec![self.mean[c]; col.len()]
                } else {
                    col.iter().map(|z| z * self.std[c] + self.mean[c]).collect()
                }
            })
            .collect();
        panel.with_values(values)
    }

    fn check_channels(&self, panel: &TimeSeriesPanel) -> Result<()> {
        if panel.channel_names != self.channel_names {
            return Err(RcaError::ChannelMismatch("panel channels differ from the stored statistics".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = StatsDocument { format_version: FORMAT_VERSION, stats: self.clone() };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StatsDocument = serde_json::from_str(text)?;
        crate::check_version(doc.format_version)?;
        Ok(doc.stats)
    }
}

#[derive(Serialize, Deserialize)]
struct StatsDocument {
    format_version: u32,
    #[serde(flatten)]
    stats: ChannelStats,
}

/// Standardizes with statistics estimated on `train_range` only.
pub fn standardize(panel: &TimeSeriesPanel, train_range: Range<usize>) -> Result<(TimeSeriesPanel, ChannelStats)> {
    let stats = ChannelStats::estimate(panel, train_range)?;
    Ok((stats.apply(panel)?, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub impute: ImputeMethod,
    pub smooth_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { impute: ImputeMethod::LinearInterpolate, smooth_window: 5 }
    }
}

/// Imputation, smoothing and standardization in one call.
pub fn preprocess(
    panel: &TimeSeriesPanel,
    config: &PreprocessConfig,
    train_range: Range<usize>,
) -> Result<(TimeSeriesPanel, ChannelStats)> {
    let filled = impute_missing(panel, config.impute)?;
    let smoothed = smooth(&filled, config.smooth_window.min(filled.len()).max(1))?;
    standardize(&smoothed, train_range)
}

/// Runs imputation and smoothing, then applies previously fitted statistics.
pub fn preprocess_with(
    panel: &TimeSeriesPanel,
    config: &PreprocessConfig,
    stats: &ChannelStats,
) -> Result<TimeSeriesPanel> {
    let filled = impute_missing(panel, config.impute)?;
    let smoothed = smooth(&filled, config.smooth_window.min(filled.len()).max(1))?;
    stats.apply(&smoothed)
}
