//! Synthetic KPI scenarios with known root causes.
//!
//! Base channels are sinusoids `A sin(2 pi f t + phase)` with `f` drawn from
//! `[0.01, 0.1]` cycles per sample and `A` from `[0.5, 2]`. Every other
//! channel is a gain-weighted sum of delayed parents plus Gaussian noise,
//! so the dependency list is the exact causal graph of the scenario.
//! Anomalies are injected into chosen channels and, when propagation is on,
//! pushed through the dependency graph so downstream symptoms arise from
//! the mechanics of the model rather than from labels.
//!
//! All randomness comes from `ChaCha8Rng` (rand_chacha 0.9) seeded with
//! `seed_from_u64(spec.seed)`. Generation reads stream 0, topology
//! sampling stream 1 and anomaly placement stream 2, so the three can be
//! reproduced independently.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::panel::TimeSeriesPanel;
use crate::FORMAT_VERSION;

const GENERATION_STREAM: u64 = 0;
const TOPOLOGY_STREAM: u64 = 1;
const INJECTION_STREAM: u64 = 2;

pub const SPIKE_SIGMAS: f64 = 8.0;
pub const LEVEL_SHIFT_SIGMAS: f64 = 5.0;
pub const AMPLITUDE_FACTOR: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependency {
    pub source: usize,
    pub target: usize,
    /// Samples, at least one.
    pub delay: usize,
    pub gain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// `+8 sigma` for one to three samples.
    Spike,
    /// `+5 sigma` for the whole window.
    LevelShift,
    /// Deviations from the clean mean scaled by 2.5 over the window.
    AmplitudeChange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub channels: usize,
    pub length: usize,
    /// Channels without parents; they carry the sinusoids.
    pub n_sources: usize,
    pub dependencies: Vec<Dependency>,
    pub noise_std: f64,
    pub n_anomalies: usize,
    pub anomaly_kinds: Vec<AnomalyKind>,
    pub anomaly_window: usize,
    /// Sustained anomalies start at a random offset within this fraction
    /// of the window and run to its end; 0 starts them all together.
    #[serde(default)]
    pub onset_spread: f64,
    /// Anomalies never start before this index.
    pub clean_prefix: usize,
    pub propagate: bool,
    pub seed: u64,
}

/// Knobs for [`ScenarioSpec::random`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyParams {
    pub n_sources: usize,
    /// Probability that a dependent channel draws a second parent.
    pub second_parent_prob: f64,
    pub delay_range: (usize, usize),
    pub gain_range: (f64, f64),
    /// Longest source-to-channel path; parents are drawn from shallower
    /// channels only. `None` leaves depth unbounded.
    pub max_depth: Option<usize>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self { n_sources: 6, second_parent_prob: 0.3, delay_range: (1, 5), gain_range: (0.5, 1.5), max_depth: None }
    }
}

impl ScenarioSpec {
    /// Samples a scenario whose dependency graph is a forest of small DAGs,
    /// one per source. Every source gets at least one child, and channel
    /// labels are shuffled so index order says nothing about causal order.
    pub fn random(channels: usize, length: usize, n_anomalies: usize, topology: &TopologyParams, seed: u64) -> Result<Self> {
        let n_sources = topology.n_sources;
        if n_sources == 0 || n_sources > channels {
            return Err(RcaError::InvalidSpec(format!("{n_sources} sources for {channels} channels")));
        }
        let (dmin, dmax) = topology.delay_range;
        let (gmin, gmax) = topology.gain_range;
        if dmin == 0 || dmax < dmin || gmax < gmin {
            return Err(RcaError::InvalidSpec("empty delay or gain range".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TOPOLOGY_STREAM);

        // Build on construction order, relabel afterwards.
        let max_depth = topology.max_depth.unwrap_or(usize::MAX);
        if max_depth == 0 && channels > n_sources {
            return Err(RcaError::InvalidSpec("max_depth 0 leaves no room for dependents".into()));
        }
        let mut component = Vec::with_capacity(channels);
        let mut depth = vec![0usize; n_sources];
        let mut raw = Vec::new();
        component.extend(0..n_sources);
        for j in n_sources..channels {
            let first = if j < 2 * n_sources {
                j - n_sources
            } else {
                let open: Vec<usize> = (0..j).filter(|&p| depth[p] < max_depth).collect();
                open[rng.random_range(0..open.len())]
            };
            let comp = component[first];
            component.push(comp);
            let mut parents = vec![first];
            if rng.random::<f64>() < topology.second_parent_prob {
                let pool: Vec<usize> =
                    (0..j).filter(|&p| component[p] == comp && p != first && depth[p] < max_depth).collect();
                if !pool.is_empty() {
                    parents.push(pool[rng.random_range(0..pool.len())]);
                }
            }
            depth.push(parents.iter().map(|&p| depth[p] + 1).max().expect("at least one parent"));
            for p in parents {
                raw.push(Dependency {
                    source: p,
                    target: j,
                    delay: rng.random_range(dmin..=dmax),
                    gain: rng.random_range(gmin..=gmax),
                });
            }
        }
        let mut labels: Vec<usize> = (0..channels).collect();
        for i in (1..channels).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let mut dependencies: Vec<Dependency> = raw
            .into_iter()
            .map(|d| Dependency { source: labels[d.source], target: labels[d.target], ..d })
            .collect();
        dependencies.sort_by_key(|d| (d.target, d.source));

        // Long enough for lagged causal discovery at default settings.
        let anomaly_window = (length / 25).clamp(80, 200).min(length - length / 2);
        Ok(Self {
            channels,
            length,
            n_sources,
            dependencies,
            noise_std: 0.1,
            n_anomalies,
            anomaly_kinds: vec![AnomalyKind::LevelShift, AnomalyKind::AmplitudeChange],
            anomaly_window,
            onset_spread: 0.5,
            clean_prefix: length / 2,
            propagate: true,
            seed,
        })
    }

    pub fn parents(&self, channel: usize) -> impl Iterator<Item = &Dependency> + '_ {
        self.dependencies.iter().filter(move |d| d.target == channel)
    }

    pub fn is_source(&self, channel: usize) -> bool {
        self.parents(channel).next().is_none()
    }

    pub fn channel_names(&self) -> Vec<String> {
        let width = self.channels.saturating_sub(1).to_string().len();
        (0..self.channels).map(|c| format!("kpi_{c:0width$}")).collect()
    }

    /// Checks sizes and acyclicity; returns a topological order.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.channels == 0 || self.length == 0 {
            return Err(RcaError::InvalidSpec("scenario needs at least one channel and one sample".into()));
        }
        if self.n_anomalies > self.channels {
            return Err(RcaError::InvalidSpec(format!(
                "{} anomalies requested for {} channels",
                self.n_anomalies, self.channels
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(RcaError::InvalidSpec("noise_std must be nonnegative".into()));
        }
        for d in &self.dependencies {
            if d.source >= self.channels || d.target >= self.channels {
                return Err(RcaError::InvalidSpec(format!("dependency {} -> {} out of range", d.source, d.target)));
            }
            if d.delay == 0 {
                return Err(RcaError::InvalidSpec(format!("dependency {} -> {} has zero delay", d.source, d.target)));
            }
        }
        let sources = (0..self.channels).filter(|&c| self.is_source(c)).count();
        if sources != self.n_sources {
            return Err(RcaError::InvalidSpec(format!(
                "n_sources is {} but {sources} channels have no parents",
                self.n_sources
            )));
        }
        if self.n_anomalies > 0 {
            if self.anomaly_kinds.is_empty() {
                return Err(RcaError::InvalidSpec("no anomaly kinds to draw from".into()));
            }
            if !(0.0..=1.0).contains(&self.onset_spread) {
                return Err(RcaError::InvalidSpec(format!("onset spread {} outside [0, 1]", self.onset_spread)));
            }
            if self.anomaly_window == 0 || self.clean_prefix + self.anomaly_window > self.length {
                return Err(RcaError::InvalidSpec(format!(
                    "anomaly window of {} does not fit after the clean prefix {} in {} samples",
                    self.anomaly_window, self.clean_prefix, self.length
                )));
            }
        }
        topological_order(self.channels, &self.dependencies)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn topological_order(n: usize, deps: &[Dependency]) -> Result<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    for d in deps {
        indegree[d.target] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&c| indegree[c] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(c) = ready.pop_first() {
        order.push(c);
        for d in deps.iter().filter(|d| d.source == c) {
            indegree[d.target] -= 1;
            if indegree[d.target] == 0 {
                ready.insert(d.target);
            }
        }
    }
    if order.len() < n {
        let cycle = find_cycle(n, deps, &indegree);
        let names: Vec<String> = cycle.iter().map(|c| c.to_string()).collect();
        return Err(RcaError::InvalidSpec(format!("dependency cycle: {}", names.join(" -> "))));
    }
    Ok(order)
}

/// Walks parent links among channels left with positive indegree until a
/// channel repeats.
fn find_cycle(n: usize, deps: &[Dependency], indegree: &[usize]) -> Vec<usize> {
    let start = (0..n).find(|&c| indegree[c] > 0).expect("a cycle leaves positive indegree");
    let mut path = vec![start];
    let mut current = start;
    loop {
        let parent = deps
            .iter()
            .find(|d| d.target == current && indegree[d.source] > 0)
            .map(|d| d.source)
            .expect("every node on a cycle has a parent on it");
        if let Some(pos) = path.iter().position(|&c| c == parent) {
            let mut cycle: Vec<usize> = path[pos..].iter().rev().copied().collect();
            cycle.push(cycle[0]);
            return cycle;
        }
        path.push(parent);
        current = parent;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub range: Range<usize>,
    /// Injected channels, ascending. Propagated symptoms are not listed.
    pub root_causes: Vec<usize>,
    pub kinds: Vec<AnomalyKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub channel_names: Vec<String>,
    pub windows: Vec<AnomalyWindow>,
    pub dependencies: Vec<Dependency>,
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TruthDocumentRef { format_version: FORMAT_VERSION, truth: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TruthDocument = serde_json::from_str(text)?;
        crate::check_version(doc.format_version)?;
        Ok(doc.truth)
    }

    /// Channels downstream of `channel` in the dependency graph.
    pub fn descendants(&self, channel: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![channel];
        while let Some(c) = stack.pop() {
            for d in self.dependencies.iter().filter(|d| d.source == c) {
                if seen.insert(d.target) {
                    stack.push(d.target);
                }
            }
        }
        seen
    }
}

#[derive(Serialize)]
struct TruthDocumentRef<'a> {
    format_version: u32,
    #[serde(flatten)]
    truth: &'a GroundTruth,
}

#[derive(Deserialize)]
struct TruthDocument {
    format_version: u32,
    #[serde(flatten)]
    truth: GroundTruth,
}

/// Produces the clean panel for `spec`; the returned truth has no windows.
pub fn generate_panel(spec: &ScenarioSpec) -> Result<(TimeSeriesPanel, GroundTruth)> {
    let order = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(GENERATION_STREAM);

    let max_delay = spec.dependencies.iter().map(|d| d.delay).max().unwrap_or(0);
    let burn_in = max_delay * spec.channels;
    let total = burn_in + spec.length;

    let mut series = vec![Vec::new(); spec.channels];
    for c in 0..spec.channels {
        if spec.is_source(c) {
            let freq = rng.random_range(0.01..=0.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..=2.0);
            series[c] = (0..total).map(|t| amp * (2.0 * PI * freq * t as f64 + phase).sin()).collect();
        }
    }
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| RcaError::InvalidSpec(e.to_string()))?;
    let mut noises = vec![Vec::new(); spec.channels];
    for c in 0..spec.channels {
        if !spec.is_source(c) {
            noises[c] = (0..total).map(|_| noise.sample(&mut rng)).collect();
        }
    }
    for &c in &order {
        if spec.is_source(c) {
            continue;
        }
        let mut col = std::mem::take(&mut noises[c]);
        for d in spec.parents(c) {
            let parent = &series[d.source];
            for t in d.delay..total {
                col[t] += d.gain * parent[t - d.delay];
            }
        }
        series[c] = col;
    }
    let values = series.into_iter().map(|col| col[burn_in..].to_vec()).collect();
    let panel = TimeSeriesPanel::from_columns(spec.channel_names(), values)?;
    let truth = GroundTruth { channel_names: spec.channel_names(), windows: Vec::new(), dependencies: spec.dependencies.clone() };
    Ok((panel, truth))
}

/// One anomaly to apply at a fixed place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub channel: usize,
    pub kind: AnomalyKind,
    pub range: Range<usize>,
}

/// Draws `spec.n_anomalies` distinct channels, one kind each, and a shared
/// window placed after the clean prefix, then applies them.
pub fn inject_anomalies(
    panel: &TimeSeriesPanel,
    truth: &GroundTruth,
    spec: &ScenarioSpec,
) -> Result<(TimeSeriesPanel, GroundTruth)> {
    spec.validate()?;
    if spec.n_anomalies == 0 {
        return Ok((panel.clone(), truth.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(INJECTION_STREAM);
    let mut channels = sample(&mut rng, spec.channels, spec.n_anomalies).into_vec();
    channels.sort_unstable();
    let start = rng.random_range(spec.clean_prefix..=spec.length - spec.anomaly_window);
    let window = start..start + spec.anomaly_window;
    let injections: Vec<Injection> = channels
        .into_iter()
        .map(|channel| {
            let kind = spec.anomaly_kinds[rng.random_range(0..spec.anomaly_kinds.len())];
            let range = match kind {
                AnomalyKind::Spike => {
                    let len = rng.random_range(1..=3usize).min(window.len());
                    let at = rng.random_range(window.start..=window.end - len);
                    at..at + len
                }
                _ => {
                    let spread = (spec.onset_spread * window.len() as f64) as usize;
                    let at = window.start + rng.random_range(0..=spread.min(window.len() - 1));
                    at..window.end
                }
            };
            Injection { channel, kind, range }
        })
        .collect();
    apply_injections(panel, truth, spec, window, &injections)
}

/// Applies `injections` and records them as one truth window.
pub fn apply_injections(
    panel: &TimeSeriesPanel,
    truth: &GroundTruth,
    spec: &ScenarioSpec,
    window: Range<usize>,
    injections: &[Injection],
) -> Result<(TimeSeriesPanel, GroundTruth)> {
    let order = spec.validate()?;
    if panel.n_channels() != spec.channels || panel.len() != spec.length {
        return Err(RcaError::InvalidSpec("panel shape does not match the scenario".into()));
    }
    if window.is_empty() || window.end > panel.len() {
        return Err(RcaError::InvalidSpec(format!("window {window:?} outside 0..{}", panel.len())));
    }
    for (i, inj) in injections.iter().enumerate() {
        if inj.channel >= spec.channels || inj.range.start < window.start || inj.range.end > window.end || inj.range.is_empty() {
            return Err(RcaError::InvalidSpec(format!("injection on channel {} at {:?} does not fit", inj.channel, inj.range)));
        }
        let overlaps_new = injections[..i].iter().any(|o| o.channel == inj.channel && overlaps(&o.range, &inj.range));
        let overlaps_old = truth
            .windows
            .iter()
            .any(|w| w.root_causes.contains(&inj.channel) && overlaps(&w.range, &inj.range));
        if overlaps_new || overlaps_old {
            return Err(RcaError::InvalidSpec(format!("overlapping anomaly windows on channel {}", inj.channel)));
        }
    }

    let clean = panel.columns();
    let mut values: Vec<Vec<f64>> = clean.to_vec();
    let mut delta = vec![vec![0.0; panel.len()]; spec.channels];
    for &c in &order {
        if spec.propagate {
            for d in spec.parents(c) {
                for t in d.delay..panel.len() {
                    delta[c][t] += d.gain * delta[d.source][t - d.delay];
                }
            }
        }
        for inj in injections.iter().filter(|i| i.channel == c) {
            let col = &clean[c];
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sigma = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64).sqrt();
            for t in inj.range.clone() {
                let current = col[t] + delta[c][t];
                let modified = match inj.kind {
                    AnomalyKind::Spike => current + SPIKE_SIGMAS * sigma,
                    AnomalyKind::LevelShift => current + LEVEL_SHIFT_SIGMAS * sigma,
                    AnomalyKind::AmplitudeChange => mean + AMPLITUDE_FACTOR * (current - mean),
                };
                delta[c][t] = modified - col[t];
            }
        }
        for (v, dv) in values[c].iter_mut().zip(&delta[c]) {
            *v += dv;
        }
    }

    let mut out_truth = truth.clone();
    let mut roots: Vec<(usize, AnomalyKind)> = injections.iter().map(|i| (i.channel, i.kind)).collect();
    roots.sort_unstable();
    roots.dedup_by_key(|r| r.0);
    if !roots.is_empty() {
        out_truth.windows.push(AnomalyWindow {
            range: window,
            root_causes: roots.iter().map(|r| r.0).collect(),
            kinds: roots.iter().map(|r| r.1).collect(),
        });
    }
    Ok((panel.with_values(values)?, out_truth))
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Generates the clean panel and injects the scenario's anomalies.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(TimeSeriesPanel, GroundTruth)> {
    let (panel, truth) = generate_panel(spec)?;
    inject_anomalies(&panel, &truth, spec)
}

/// Panel of independent groups. Each group follows its own Gaussian AR(1)
/// driver; members are delayed, scaled copies of it plus noise. Channels are
/// numbered group by group.
pub fn planted_partition_panel(group_sizes: &[usize], length: usize, noise_std: f64, seed: u64) -> Result<(TimeSeriesPanel, Vec<Vec<usize>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, noise_std).map_err(|e| RcaError::InvalidSpec(e.to_string()))?;
    let mut columns = Vec::new();
    let mut groups = Vec::new();
    let burn_in = 50;
    for &size in group_sizes {
        let mut driver = vec![0.0; length + burn_in];
        for t in 1..driver.len() {
            driver[t] = 0.8 * driver[t - 1] + unit.sample(&mut rng);
        }
        let mut members = Vec::with_capacity(size);
        for _ in 0..size {
            let delay = rng.random_range(0..=3usize);
            let gain = rng.random_range(0.5..=1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            members.push(columns.len());
            columns.push((0..length).map(|t| gain * driver[t + burn_in - delay] + noise.sample(&mut rng)).collect());
        }
        groups.push(members);
    }
    let names = (0..columns.len()).map(|c| format!("ch{c}")).collect();
    Ok((TimeSeriesPanel::from_columns(names, columns)?, groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_spec(noise_std: f64, n_anomalies: usize) -> ScenarioSpec {
        ScenarioSpec {
            channels: 2,
            length: 400,
            n_sources: 1,
            dependencies: vec![Dependency { source: 0, target: 1, delay: 3, gain: 1.0 }],
            noise_std,
            n_anomalies,
            anomaly_kinds: vec![AnomalyKind::LevelShift],
            anomaly_window: 50,
            onset_spread: 0.0,
            clean_prefix: 200,
            propagate: true,
            seed: 11,
        }
    }

    #[test]
    fn noise_free_child_is_shifted_parent() {
        let (panel, _) = generate_panel(&chain_spec(0.0, 0)).unwrap();
        let (p, c) = (panel.channel(0), panel.channel(1));
        for t in 3..panel.len() {
            assert_eq!(c[t], p[t - 3]);
        }
    }

    #[test]
    fn no_anomalies_leaves_panel_unchanged() {
        let spec = chain_spec(0.1, 0);
        let (panel, truth) = generate_panel(&spec).unwrap();
        let (out, out_truth) = inject_anomalies(&panel, &truth, &spec).unwrap();
        assert_eq!(out, panel);
        assert!(out_truth.windows.is_empty());
    }

    #[test]
    fn level_shift_propagates_to_child() {
        let spec = chain_spec(0.0, 0);
        let (panel, truth) = generate_panel(&spec).unwrap();
        let inj = Injection { channel: 0, kind: AnomalyKind::LevelShift, range: 250..300 };
        let (out, truth) = apply_injections(&panel, &truth, &spec, 250..300, &[inj]).unwrap();
        let col = panel.channel(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sigma = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        for t in 250..300 {
            assert!((out.value(t, 0) - panel.value(t, 0) - 5.0 * sigma).abs() < 1e-12);
            assert!((out.value(t + 3, 1) - panel.value(t + 3, 1) - 5.0 * sigma).abs() < 1e-12);
        }
        assert_eq!(out.value(252, 1), panel.value(252, 1));
        assert_eq!(truth.windows[0].root_causes, vec![0]);
    }

    #[test]
    fn cycle_is_reported_by_name() {
        let mut spec = chain_spec(0.1, 0);
        spec.channels = 3;
        spec.n_sources = 1;
        spec.dependencies = vec![
            Dependency { source: 0, target: 1, delay: 1, gain: 1.0 },
            Dependency { source: 1, target: 2, delay: 1, gain: 1.0 },
            Dependency { source: 2, target: 1, delay: 1, gain: 1.0 },
        ];
        let err = generate_panel(&spec).unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
        assert!(err.contains("1 -> 2 -> 1") || err.contains("2 -> 1 -> 2"), "{err}");
    }

    #[test]
    fn overlapping_injections_are_rejected() {
        let spec = chain_spec(0.0, 0);
        let (panel, truth) = generate_panel(&spec).unwrap();
        let a = Injection { channel: 0, kind: AnomalyKind::LevelShift, range: 250..280 };
        let b = Injection { channel: 0, kind: AnomalyKind::Spike, range: 270..272 };
        assert!(matches!(
            apply_injections(&panel, &truth, &spec, 250..300, &[a, b]),
            Err(RcaError::InvalidSpec(_))
        ));
    }

    #[test]
    fn random_spec_is_a_valid_forest() {
        let spec = ScenarioSpec::random(30, 2000, 5, &TopologyParams::default(), 3).unwrap();
        spec.validate().unwrap();
        assert_eq!((0..30).filter(|&c| spec.is_source(c)).count(), 6);
        for s in (0..30).filter(|&c| spec.is_source(c)) {
            assert!(spec.dependencies.iter().any(|d| d.source == s), "source {s} has no child");
        }
    }
}

#[cfg(test)]
mod properties {
    use super::*;

    fn depth_of(spec: &ScenarioSpec) -> usize {
        let order = spec.validate().unwrap();
        let mut depth = vec![0usize; spec.channels];
        for &c in &order {
            depth[c] = spec.parents(c).map(|d| depth[d.source] + 1).max().unwrap_or(0);
        }
        depth.into_iter().max().unwrap()
    }

    #[test]
    fn generation_is_a_pure_function_of_the_spec() {
        let spec = ScenarioSpec::random(12, 1000, 3, &TopologyParams::default(), 5).unwrap();
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a, b);
        let other = ScenarioSpec { seed: 6, ..spec };
        assert_ne!(generate_scenario(&other).unwrap().0, a.0);
    }

    #[test]
    fn child_noise_has_the_configured_spread() {
        let spec = ScenarioSpec {
            channels: 2,
            length: 5000,
            n_sources: 1,
            dependencies: vec![Dependency { source: 0, target: 1, delay: 4, gain: 1.0 }],
            noise_std: 0.1,
            n_anomalies: 0,
            anomaly_kinds: vec![],
            anomaly_window: 0,
            onset_spread: 0.0,
            clean_prefix: 0,
            propagate: true,
            seed: 17,
        };
        let (panel, _) = generate_panel(&spec).unwrap();
        let r: Vec<f64> = (4..5000).map(|t| panel.value(t, 1) - panel.value(t - 4, 0)).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "{sd}");
    }

    #[test]
    fn spike_reaches_eight_sigma() {
        for seed in 0..10 {
            let mut spec = ScenarioSpec::random(8, 2000, 2, &TopologyParams { n_sources: 3, ..Default::default() }, seed).unwrap();
            spec.anomaly_kinds = vec![AnomalyKind::Spike];
            let (clean, truth) = generate_panel(&spec).unwrap();
            let (_, std) = {
                let (_, stats) = crate::panel::standardize(&clean, 0..clean.len()).unwrap();
                (stats.mean.clone(), stats.std)
            };
            let (faulty, truth) = inject_anomalies(&clean, &truth, &spec).unwrap();
            let w = &truth.windows[0];
            for &c in &w.root_causes {
                let peak = w.range.clone().map(|t| (faulty.value(t, c) - clean.value(t, c)).abs()).fold(0.0, f64::max);
                assert!(peak >= SPIKE_SIGMAS * std[c] * (1.0 - 1e-12), "seed {seed} channel {c}");
            }
        }
    }

    #[test]
    fn truth_lists_only_injected_channels() {
        let spec = ScenarioSpec::random(30, 3000, 5, &TopologyParams::default(), 2).unwrap();
        let (clean, truth) = generate_panel(&spec).unwrap();
        let (faulty, truth) = inject_anomalies(&clean, &truth, &spec).unwrap();
        let w = &truth.windows[0];
        assert_eq!(w.root_causes.len(), 5);
        assert!(w.range.start >= spec.clean_prefix && w.range.end <= spec.length);
        let changed: BTreeSet<usize> =
            (0..30).filter(|&c| faulty.channel(c) != clean.channel(c)).collect();
        let mut reach: BTreeSet<usize> = w.root_causes.iter().copied().collect();
        for &r in &w.root_causes {
            reach.extend(truth.descendants(r));
        }
        assert!(changed.is_subset(&reach));
        assert!(w.root_causes.iter().all(|r| changed.contains(r)));
        if reach.len() > w.root_causes.len() {
            assert!(changed.len() > w.root_causes.len());
        }
    }

    #[test]
    fn onsets_spread_over_the_window_front() {
        let spec = ScenarioSpec::random(30, 5000, 8, &TopologyParams::default(), 4).unwrap();
        let (clean, truth) = generate_panel(&spec).unwrap();
        let (faulty, truth) = inject_anomalies(&clean, &truth, &spec).unwrap();
        let w = &truth.windows[0];
        let limit = w.range.start + (spec.onset_spread * w.range.len() as f64) as usize;
        let onsets: BTreeSet<usize> = w
            .root_causes
            .iter()
            .map(|&c| w.range.clone().find(|&t| faulty.value(t, c) != clean.value(t, c)).unwrap())
            .collect();
        assert!(onsets.iter().all(|&t| t <= limit));
        assert!(onsets.len() > 1);

        let together = ScenarioSpec { onset_spread: 0.0, ..spec.clone() };
        let (faulty, truth) = inject_anomalies(&clean, &generate_panel(&together).unwrap().1, &together).unwrap();
        let w = &truth.windows[0];
        for &c in &w.root_causes {
            assert_ne!(faulty.value(w.range.start, c), clean.value(w.range.start, c));
        }
    }

    #[test]
    fn depth_cap_limits_paths() {
        for cap in [1, 2, 3] {
            for seed in 0..5 {
                let topo = TopologyParams { max_depth: Some(cap), ..Default::default() };
                let spec = ScenarioSpec::random(30, 500, 0, &topo, seed).unwrap();
                assert!(depth_of(&spec) <= cap);
            }
        }
        let topo = TopologyParams { max_depth: Some(0), ..Default::default() };
        assert!(matches!(ScenarioSpec::random(30, 500, 0, &topo, 0), Err(RcaError::InvalidSpec(_))));
    }

    #[test]
    fn documents_round_trip() {
        let spec = ScenarioSpec::random(10, 800, 2, &TopologyParams { n_sources: 3, ..Default::default() }, 9).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&spec.to_json().unwrap()).unwrap();
        assert_eq!(back, spec);
        let (_, truth) = generate_scenario(&spec).unwrap();
        assert_eq!(GroundTruth::from_json(&truth.to_json().unwrap()).unwrap(), truth);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let good = ScenarioSpec::random(10, 800, 2, &TopologyParams { n_sources: 3, ..Default::default() }, 1).unwrap();
        let cases = [
            ScenarioSpec { n_anomalies: 11, ..good.clone() },
            ScenarioSpec { noise_std: -1.0, ..good.clone() },
            ScenarioSpec { onset_spread: 1.5, ..good.clone() },
            ScenarioSpec { anomaly_window: 1000, ..good.clone() },
            ScenarioSpec { n_sources: 4, ..good.clone() },
        ];
        for spec in cases {
            assert!(matches!(generate_panel(&spec), Err(RcaError::InvalidSpec(_))));
        }
    }
}
