//! Causal ranking over the residual series of anomalous indicators.
//!
//! Lagged causal discovery runs on the event's residuals only. Anomalous
//! channels with no anomalous cause are the candidates; each is scored by
//! how many anomalous channels it reaches times its own peak residual.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Method, RootCauseRanking};
use crate::causal::{difference, discover, CausalConfig, CausalGraph};
use crate::detect::AnomalyEvent;
use crate::error::{RcaError, Result};

/// Everything the ranking was derived from, in event-local indices mapped
/// back to panel channels through `channels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcorcaAnalysis {
    /// Panel channel of each local node.
    pub channels: Vec<usize>,
    /// Discovered graph; `None` when discovery was skipped.
    pub graph: Option<CausalGraph>,
    /// Panel channel of each node of `graph`.
    pub graph_channels: Vec<usize>,
    /// Local cause -> effect pairs between distinct channels.
    pub directed: BTreeSet<(usize, usize)>,
    /// Panel channels that qualified as candidates.
    pub candidates: Vec<usize>,
    pub ranking: RootCauseRanking,
}

fn descendants(children: &[Vec<usize>], from: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        for &v in &children[u] {
            if v != from && seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen
}

/// Nodes with no incoming edge from another node. When cycles leave a
/// component without sources, every member of a strongly connected
/// component that has no outside causes qualifies instead.
fn source_nodes(n: usize, children: &[Vec<usize>]) -> Vec<usize> {
    let reach: Vec<BTreeSet<usize>> = (0..n).map(|u| descendants(children, u)).collect();
    let mut parents = vec![BTreeSet::new(); n];
    for (u, cs) in children.iter().enumerate() {
        for &v in cs {
            parents[v].insert(u);
        }
    }
    // u and v share a component when each reaches the other.
    let same_scc = |u: usize, v: usize| u == v || (reach[u].contains(&v) && reach[v].contains(&u));
    (0..n).filter(|&v| parents[v].iter().all(|&p| same_scc(p, v))).collect()
}

/// Runs discovery on the event's residuals and ranks the candidates.
pub fn tcorca_analyze(event: &AnomalyEvent, config: &CausalConfig, n: usize) -> Result<TcorcaAnalysis> {
    let channels: Vec<usize> = event.residual_series.keys().copied().collect();
    if channels.is_empty() {
        return Err(RcaError::EmptyInput);
    }
    let peaks: Vec<f64> = channels.iter().map(|&c| event.peak_residual(c).unwrap_or(0.0)).collect();

    // Constant residuals carry no dependence information; they stay in the
    // ranking as isolated nodes.
    let varies = |s: &[f64]| s.iter().any(|v| (v - s[0]).abs() > 1e-12);
    let varying: Vec<usize> = (0..channels.len())
        .filter(|&i| {
            let s = &event.residual_series[&channels[i]];
            if config.difference {
                difference(std::slice::from_ref(s)).first().is_some_and(|d| !d.is_empty() && varies(d))
            } else {
                varies(s)
            }
        })
        .collect();

    let mut children = vec![Vec::new(); channels.len()];
    let mut directed = BTreeSet::new();
    let mut graph = None;
    let mut graph_channels = Vec::new();
    if varying.len() >= 2 {
        let series: Vec<Vec<f64>> = varying.iter().map(|&i| event.residual_series[&channels[i]].clone()).collect();
        let g = discover(&series, config)?;
        for (cause, effect) in g.directed_channel_edges() {
            if cause != effect {
                directed.insert((varying[cause], varying[effect]));
            }
        }
        graph = Some(g);
        graph_channels = varying.iter().map(|&i| channels[i]).collect();
    }
    for &(u, v) in &directed {
        children[u].push(v);
    }

    let local = if directed.is_empty() { (0..channels.len()).collect() } else { source_nodes(channels.len(), &children) };
    let scores = local.iter().map(|&i| {
        let reach = descendants(&children, i).len();
        (channels[i], (1 + reach) as f64 * peaks[i])
    });
    let ranking = RootCauseRanking::from_scores(Method::Tcorca, scores, n);
    Ok(TcorcaAnalysis {
        candidates: local.iter().map(|&i| channels[i]).collect(),
        channels,
        graph,
        graph_channels,
        directed,
        ranking,
    })
}

/// Top-`n` root causes of `event`.
pub fn tcorca_rank(event: &AnomalyEvent, config: &CausalConfig, n: usize) -> Result<RootCauseRanking> {
    Ok(tcorca_analyze(event, config, n)?.ranking)
}
