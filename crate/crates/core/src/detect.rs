//! Broken-link detection over evaluation windows.
//!
//! Every invariant carries a residual envelope learned on normal data. A
//! link is *broken* in a window when at least `break_ratio_min` of the
//! window's residuals leave that envelope. An [`AnomalyEvent`] is raised
//! when enough of the graph breaks at once (or any link breaks on every
//! sample), and it carries the residual series the ranking stage consumes.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::invariant::{predict_residuals, ArxInvariant, InvariantGraph};
use crate::panel::TimeSeriesPanel;
use crate::FORMAT_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    /// Fraction of window samples outside the envelope that breaks a link.
    pub break_ratio_min: f64,
    /// Fraction of broken links that raises an event.
    pub system_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { break_ratio_min: 0.2, system_threshold: 0.03 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStatus {
    /// Index into `InvariantGraph::edges`.
    pub edge: usize,
    pub source: usize,
    pub target: usize,
    pub window: Range<usize>,
    pub broken: bool,
    pub violation_ratio: f64,
    pub peak_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub window: Range<usize>,
    pub statuses: Vec<LinkStatus>,
    /// Channels incident to at least one broken link, ascending.
    pub anomalous_channels: Vec<usize>,
    pub anomalous_names: Vec<String>,
    /// Residual series over the window, keyed by anomalous channel.
    #[serde(with = "residual_list")]
    pub residual_series: BTreeMap<usize, Vec<f64>>,
    pub system_broken_ratio: f64,
}

impl AnomalyEvent {
    pub fn broken_edges(&self) -> impl Iterator<Item = &LinkStatus> + '_ {
        self.statuses.iter().filter(|s| s.broken)
    }

    pub fn is_anomalous(&self, channel: usize) -> bool {
        self.anomalous_channels.binary_search(&channel).is_ok()
    }

    /// Largest absolute value of the channel's residual series.
    pub fn peak_residual(&self, channel: usize) -> Option<f64> {
        self.residual_series.get(&channel).map(|r| r.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EventDocumentRef { format_version: FORMAT_VERSION, event: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EventDocument = serde_json::from_str(text)?;
        crate::check_version(doc.format_version)?;
        Ok(doc.event)
    }
}

#[derive(Serialize)]
struct EventDocumentRef<'a> {
    format_version: u32,
    #[serde(flatten)]
    event: &'a AnomalyEvent,
}

#[derive(Deserialize)]
struct EventDocument {
    format_version: u32,
    #[serde(flatten)]
    event: AnomalyEvent,
}

/// Written as a list of `{channel, residuals}` objects; integer map keys do
/// not survive the flattened document wrapper.
mod residual_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        channel: usize,
        residuals: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map.iter().map(|(&channel, r)| Entry { channel, residuals: r.clone() }).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, Vec<f64>>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?.into_iter().map(|e| (e.channel, e.residuals)).collect())
    }
}

fn check_window(graph: &InvariantGraph, panel: &TimeSeriesPanel, window: &Range<usize>) -> Result<()> {
    if panel.channel_names() != graph.channel_names.as_slice() {
        return Err(RcaError::ChannelMismatch("panel channels differ from the model's".into()));
    }
    let warm_up = graph.max_warm_up();
    if window.is_empty() || window.end > panel.len() {
        return Err(RcaError::InvalidWindow(format!("window {window:?} outside 0..{}", panel.len())));
    }
    if window.start < warm_up || window.len() < warm_up {
        return Err(RcaError::InvalidWindow(format!(
            "window {window:?} is shorter than or starts before the {warm_up}-sample warm-up"
        )));
    }
    Ok(())
}

/// Status of every edge over `window`, in edge order.
pub fn evaluate_links(
    graph: &InvariantGraph,
    panel: &TimeSeriesPanel,
    window: Range<usize>,
    break_ratio_min: f64,
) -> Result<Vec<LinkStatus>> {
    check_window(graph, panel, &window)?;
    graph
        .edges
        .par_iter()
        .enumerate()
        .map(|(i, edge)| {
            let residuals = predict_residuals(edge, panel, window.clone())?;
            let violations = residuals.iter().filter(|r| r.abs() > edge.residual_threshold).count();
            let violation_ratio = violations as f64 / residuals.len() as f64;
            Ok(LinkStatus {
                edge: i,
                source: edge.source,
                target: edge.target,
                window: window.clone(),
                broken: violation_ratio >= break_ratio_min,
                violation_ratio,
                peak_residual: residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs())),
            })
        })
        .collect()
}

/// The model whose residuals represent `channel`: the best-fitting edge or
/// companion fit predicting it, else the best-fitting incident edge.
pub fn representative_model(graph: &InvariantGraph, channel: usize) -> Option<&ArxInvariant> {
    fn best<'a>(it: impl Iterator<Item = &'a ArxInvariant>) -> Option<&'a ArxInvariant> {
        it.fold(None, |acc: Option<&ArxInvariant>, e| match acc {
            Some(b) if b.fitness >= e.fitness => acc,
            _ => Some(e),
        })
    }
    let fitness_min = graph.config.fitness_min;
    best(graph.models_targeting(channel).filter(|e| e.fitness >= fitness_min))
        .or_else(|| best(graph.incident_edges(channel).map(|(_, e)| e)))
}

/// Assembles an event from link statuses, or `None` when the window is
/// quiet.
pub fn assemble_event(
    graph: &InvariantGraph,
    panel: &TimeSeriesPanel,
    window: Range<usize>,
    statuses: Vec<LinkStatus>,
    system_threshold: f64,
) -> Result<Option<AnomalyEvent>> {
    if statuses.is_empty() {
        return Ok(None);
    }
    let broken = statuses.iter().filter(|s| s.broken).count();
    let ratio = broken as f64 / statuses.len() as f64;
    let sustained = statuses.iter().any(|s| s.violation_ratio >= 1.0);
    if broken == 0 || !(ratio >= system_threshold || sustained) {
        return Ok(None);
    }
    let mut anomalous: Vec<usize> = statuses.iter().filter(|s| s.broken).flat_map(|s| [s.source, s.target]).collect();
    anomalous.sort_unstable();
    anomalous.dedup();
    let mut residual_series = BTreeMap::new();
    for &c in &anomalous {
        let model = representative_model(graph, c).expect("anomalous channels have incident edges");
        residual_series.insert(c, predict_residuals(model, panel, window.clone())?);
    }
    Ok(Some(AnomalyEvent {
        window,
        anomalous_names: anomalous.iter().map(|&c| graph.channel_names[c].clone()).collect(),
        anomalous_channels: anomalous,
        residual_series,
        statuses,
        system_broken_ratio: ratio,
    }))
}

/// Evaluates `window` and raises an event when the broken fraction reaches
/// `config.system_threshold` or some link is violated on every sample.
pub fn detect_anomaly(
    graph: &InvariantGraph,
    panel: &TimeSeriesPanel,
    window: Range<usize>,
    config: &DetectConfig,
) -> Result<Option<AnomalyEvent>> {
    let statuses = evaluate_links(graph, panel, window.clone(), config.break_ratio_min)?;
    assemble_event(graph, panel, window, statuses, config.system_threshold)
}

/// Sliding-window scan of `range` with stride `window_len / 2`.
pub fn scan(
    graph: &InvariantGraph,
    panel: &TimeSeriesPanel,
    range: Range<usize>,
    window_len: usize,
    config: &DetectConfig,
) -> Result<Vec<AnomalyEvent>> {
    if window_len == 0 || window_len > range.len() {
        return Err(RcaError::InvalidWindow(format!("window of {window_len} does not fit in {range:?}")));
    }
    let stride = (window_len / 2).max(1);
    let mut events = Vec::new();
    let mut start = range.start;
    while start + window_len <= range.end {
        if let Some(event) = detect_anomaly(graph, panel, start..start + window_len, config)? {
            events.push(event);
        }
        start += stride;
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariant::{fccg_cluster, FccgConfig};
    use crate::panel::standardize;
    use crate::synth::planted_partition_panel;

    fn fitted(groups: &[usize], seed: u64) -> (InvariantGraph, TimeSeriesPanel) {
        let (raw, _) = planted_partition_panel(groups, 1500, 0.2, seed).unwrap();
        let (panel, _) = standardize(&raw, 0..1000).unwrap();
        let graph = fccg_cluster(&panel, 0..1000, &FccgConfig::default(), seed).unwrap();
        (graph, panel)
    }

    fn shifted(panel: &TimeSeriesPanel, channel: usize, range: Range<usize>, delta: f64) -> TimeSeriesPanel {
        let mut cols = panel.columns().to_vec();
        for v in &mut cols[channel][range] {
            *v += delta;
        }
        panel.with_values(cols).unwrap()
    }

    #[test]
    fn training_replay_breaks_nothing() {
        let (graph, panel) = fitted(&[5, 5], 1);
        let statuses = evaluate_links(&graph, &panel, graph.max_warm_up()..1000, 0.2).unwrap();
        assert_eq!(statuses.len(), graph.edges.len());
        assert!(statuses.iter().all(|s| s.violation_ratio == 0.0 && !s.broken));
        assert!(detect_anomaly(&graph, &panel, graph.max_warm_up()..1000, &DetectConfig::default()).unwrap().is_none());
    }

    #[test]
    fn large_shift_breaks_incident_edges() {
        let (mut total, mut broken) = (0, 0);
        for seed in 0..20 {
            let (graph, panel) = fitted(&[5, 5], seed);
            let c = graph.edges[0].source;
            let faulty = shifted(&panel, c, 1100..1300, 10.0);
            let statuses = evaluate_links(&graph, &faulty, 1100..1300, 0.2).unwrap();
            for s in statuses.iter().filter(|s| s.source == c || s.target == c) {
                total += 1;
                broken += s.broken as usize;
            }
        }
        assert!(broken as f64 >= 0.95 * total as f64, "{broken}/{total}");
    }

    #[test]
    fn violation_ratio_grows_with_shift() {
        let (graph, panel) = fitted(&[6], 4);
        let c = graph.clusters[0].pivot;
        let mut prev: Option<Vec<f64>> = None;
        for delta in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let faulty = shifted(&panel, c, 1100..1300, delta);
            let ratios: Vec<f64> =
                evaluate_links(&graph, &faulty, 1100..1300, 0.2).unwrap().iter().map(|s| s.violation_ratio).collect();
            if let Some(p) = &prev {
                assert!(ratios.iter().zip(p).all(|(a, b)| a >= b));
            }
            prev = Some(ratios);
        }
    }

    #[test]
    fn empty_edge_set_gives_no_statuses() {
        let (mut graph, panel) = fitted(&[3], 0);
        graph.edges.clear();
        graph.companions.clear();
        assert!(evaluate_links(&graph, &panel, 0..100, 0.2).unwrap().is_empty());
        assert!(detect_anomaly(&graph, &panel, 0..100, &DetectConfig::default()).unwrap().is_none());
    }

    #[test]
    fn ratio_arithmetic_on_constructed_statuses() {
        let (graph, panel) = fitted(&[5, 5, 5, 5, 5], 3);
        let window = 1100..1200;
        let mut statuses = evaluate_links(&graph, &panel, window.clone(), 0.2).unwrap();
        let chosen = [0, 4, 9];
        for s in &mut statuses {
            s.broken = chosen.contains(&s.edge);
            s.violation_ratio = if s.broken { 0.5 } else { 0.0 };
        }
        let ratio = 3.0 / statuses.len() as f64;
        let event = assemble_event(&graph, &panel, window.clone(), statuses.clone(), ratio).unwrap().unwrap();
        assert_eq!(event.system_broken_ratio, ratio);
        let mut expected: Vec<usize> = chosen.iter().flat_map(|&e| [graph.edges[e].source, graph.edges[e].target]).collect();
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(event.anomalous_channels, expected);
        assert_eq!(event.residual_series.keys().copied().collect::<Vec<_>>(), expected);
        assert!(event.residual_series.values().all(|r| r.len() == window.len()));
        assert!(assemble_event(&graph, &panel, window, statuses, ratio + 0.01).unwrap().is_none());
    }

    #[test]
    fn sustained_break_raises_event_below_threshold() {
        let (graph, panel) = fitted(&[5, 5, 5, 5, 5], 3);
        let window = 1100..1200;
        let mut statuses = evaluate_links(&graph, &panel, window.clone(), 0.2).unwrap();
        statuses[2].broken = true;
        statuses[2].violation_ratio = 1.0;
        let event = assemble_event(&graph, &panel, window, statuses, 0.9).unwrap().unwrap();
        assert!(event.system_broken_ratio < 0.9);
    }

    #[test]
    fn representative_prefers_best_model_targeting_channel() {
        let (graph, _) = fitted(&[5, 5], 2);
        for c in 0..graph.n_channels() {
            let Some(m) = representative_model(&graph, c) else {
                assert_eq!(graph.degree(c), 0);
                continue;
            };
            let best_target = graph
                .models_targeting(c)
                .filter(|e| e.fitness >= graph.config.fitness_min)
                .map(|e| e.fitness)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_target.is_finite() {
                assert_eq!(m.target, c);
                assert_eq!(m.fitness, best_target);
            } else {
                assert!(m.touches(c));
            }
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let (graph, panel) = fitted(&[4], 0);
        let w = graph.max_warm_up();
        assert!(w > 0);
        assert!(matches!(evaluate_links(&graph, &panel, 0..100, 0.2), Err(RcaError::InvalidWindow(_))));
        assert!(matches!(evaluate_links(&graph, &panel, 1000..1000 + w - 1, 0.2), Err(RcaError::InvalidWindow(_))));
    }

    #[test]
    fn event_json_round_trip() {
        let (graph, panel) = fitted(&[5, 5], 6);
        let c = graph.edges[0].target;
        let faulty = shifted(&panel, c, 1100..1300, 6.0);
        let event = detect_anomaly(&graph, &faulty, 1100..1300, &DetectConfig::default()).unwrap().unwrap();
        assert!(event.is_anomalous(c));
        assert_eq!(AnomalyEvent::from_json(&event.to_json().unwrap()).unwrap(), event);
        let again = detect_anomaly(&graph, &faulty, 1100..1300, &DetectConfig::default()).unwrap().unwrap();
        assert_eq!(again, event);
    }

    #[test]
    fn scan_strides_half_window() {
        let (graph, panel) = fitted(&[5], 5);
        let c = graph.clusters[0].pivot;
        let faulty = shifted(&panel, c, 1200..1300, 8.0);
        let events = scan(&graph, &faulty, 1000..1500, 100, &DetectConfig::default()).unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| (e.window.start - 1000) % 50 == 0 && e.window.len() == 100));
        assert!(events.iter().all(|e| e.window.start < 1300 && e.window.end > 1200));
    }
}
