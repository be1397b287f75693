//! Fast cluster correlation graph construction.
//!
//! Rather than fitting every ordered channel pair, the builder repeatedly
//! draws an unassigned pivot, fits it against every other unassigned channel
//! and absorbs the strongest partners into the pivot's cluster. With the
//! cluster size capped at `ceil(sqrt(D))` the number of pair fits grows as
//! `O(D sqrt(D))`. Pivots are then linked to one another so the graph stays
//! connected across clusters wherever invariants exist.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arx::{fit_arx, ArxInvariant, ArxSettings};
use crate::error::{RcaError, Result};
use crate::panel::{ChannelStats, TimeSeriesPanel};
use crate::FORMAT_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FccgConfig {
    /// Minimum fitness for an edge to enter the graph.
    pub fitness_min: f64,
    pub arx: ArxSettings,
    /// Cluster size including the pivot; `None` means `ceil(sqrt(D))`.
    pub max_cluster_size: Option<usize>,
}

impl Default for FccgConfig {
    fn default() -> Self {
        Self { fitness_min: 0.7, arx: ArxSettings::default(), max_cluster_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub pivot: usize,
    /// Non-pivot members, ascending.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len() + 1
    }

    pub fn contains(&self, channel: usize) -> bool {
        self.pivot == channel || self.members.binary_search(&channel).is_ok()
    }

    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.pivot).chain(self.members.iter().copied())
    }
}

/// Clusters of indicators and the invariant edges that bind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantGraph {
    pub channel_names: Vec<String>,
    pub clusters: Vec<Cluster>,
    /// Pivot-member edges in cluster order, followed by pivot-pivot edges.
    pub edges: Vec<ArxInvariant>,
    /// The opposite-direction fit of each edge, same order. Not part of the
    /// graph; kept so an endpoint that is never a target still has a model
    /// predicting it.
    pub companions: Vec<ArxInvariant>,
    pub fitted_on: Range<usize>,
    pub config: FccgConfig,
    /// Pivots in the order they were drawn.
    pub pivot_sequence: Vec<usize>,
    /// Channels left out because they do not vary over the training range.
    pub constant_channels: Vec<usize>,
    pair_fit_count: usize,
}

impl InvariantGraph {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Number of `fit_arx` calls made while building the graph.
    pub fn pair_fit_count(&self) -> usize {
        self.pair_fit_count
    }

    pub fn incident_edges(&self, channel: usize) -> impl Iterator<Item = (usize, &ArxInvariant)> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.touches(channel))
    }

    /// Edges and companion fits that predict `channel`.
    pub fn models_targeting(&self, channel: usize) -> impl Iterator<Item = &ArxInvariant> + '_ {
        self.edges.iter().chain(&self.companions).filter(move |e| e.target == channel)
    }

    pub fn degree(&self, channel: usize) -> usize {
        self.incident_edges(channel).count()
    }

    pub fn cluster_of(&self, channel: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(channel))
    }

    /// Largest warm-up over all edges and companion fits.
    pub fn max_warm_up(&self) -> usize {
        self.edges.iter().chain(&self.companions).map(ArxInvariant::warm_up).max().unwrap_or(0)
    }

    /// Edgeless graph over `n` channels, for tests that only need indices.
    #[cfg(test)]
    pub(crate) fn bare(n: usize) -> Self {
        Self {
            channel_names: (0..n).map(|c| format!("ch{c}")).collect(),
            clusters: (0..n).map(|pivot| Cluster { pivot, members: Vec::new() }).collect(),
            edges: Vec::new(),
            companions: Vec::new(),
            fitted_on: 0..0,
            config: FccgConfig::default(),
            pivot_sequence: (0..n).collect(),
            constant_channels: Vec::new(),
            pair_fit_count: 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphDocumentRef { format_version: FORMAT_VERSION, graph: self })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        crate::check_version(doc.format_version)?;
        Ok(doc.graph)
    }
}

#[derive(Serialize)]
struct GraphDocumentRef<'a> {
    format_version: u32,
    #[serde(flatten)]
    graph: &'a InvariantGraph,
}

#[derive(Deserialize)]
struct GraphDocument {
    format_version: u32,
    #[serde(flatten)]
    graph: InvariantGraph,
}

/// Builds the graph with pivots drawn uniformly from the unassigned
/// channels by a ChaCha8 generator seeded with `seed`.
pub fn fccg_cluster(
    panel: &TimeSeriesPanel,
    train: Range<usize>,
    config: &FccgConfig,
    seed: u64,
) -> Result<InvariantGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build(panel, train, config, |unassigned| Ok(unassigned[rng.random_range(0..unassigned.len())]))
}

/// Builds the graph with a fixed pivot order. Each listed channel must still
/// be unassigned when its turn comes; the list must cover every round.
pub fn fccg_cluster_with_pivots(
    panel: &TimeSeriesPanel,
    train: Range<usize>,
    config: &FccgConfig,
    pivots: &[usize],
) -> Result<InvariantGraph> {
    let mut script = pivots.iter().copied();
    build(panel, train, config, |unassigned| {
        let next = script
            .next()
            .ok_or_else(|| RcaError::MalformedInput("pivot script exhausted".into()))?;
        if unassigned.binary_search(&next).is_err() {
            return Err(RcaError::MalformedInput(format!("scripted pivot {next} is already assigned")));
        }
        Ok(next)
    })
}

/// Fits both directions; the better one comes first. Ties go to
/// `preferred` as the source.
fn best_direction(
    panel: &TimeSeriesPanel,
    preferred: usize,
    other: usize,
    train: &Range<usize>,
    settings: &ArxSettings,
) -> Result<(ArxInvariant, ArxInvariant)> {
    let forward = fit_arx(panel, preferred, other, train.clone(), settings)?;
    let backward = fit_arx(panel, other, preferred, train.clone(), settings)?;
    Ok(if backward.fitness > forward.fitness { (backward, forward) } else { (forward, backward) })
}

fn build(
    panel: &TimeSeriesPanel,
    train: Range<usize>,
    config: &FccgConfig,
    mut next_pivot: impl FnMut(&[usize]) -> Result<usize>,
) -> Result<InvariantGraph> {
    let stats = ChannelStats::estimate(panel, train.clone())?;
    let (constant, mut unassigned): (Vec<usize>, Vec<usize>) =
        (0..panel.n_channels()).partition(|&c| stats.is_constant(c));
    if unassigned.is_empty() {
        return Err(RcaError::NoInvariantsFound("every channel is constant over the training range".into()));
    }
    let cap = config
        .max_cluster_size
        .unwrap_or_else(|| (unassigned.len() as f64).sqrt().ceil() as usize)
        .max(1);

    let mut clusters = Vec::new();
    let mut edges = Vec::new();
    let mut companions = Vec::new();
    let mut pivot_sequence = Vec::new();
    let mut pair_fit_count = 0;

    while !unassigned.is_empty() {
        let pivot = next_pivot(&unassigned)?;
        unassigned.retain(|&c| c != pivot);
        pivot_sequence.push(pivot);

        // Results are collected in channel order regardless of scheduling.
        let fits: Vec<(ArxInvariant, ArxInvariant)> = unassigned
            .par_iter()
            .map(|&c| best_direction(panel, pivot, c, &train, &config.arx))
            .collect::<Result<_>>()?;
        pair_fit_count += 2 * fits.len();

        let mut accepted: Vec<(ArxInvariant, ArxInvariant)> =
            fits.into_iter().filter(|(e, _)| e.fitness >= config.fitness_min).collect();
        accepted.sort_by(|(a, _), (b, _)| b.fitness.total_cmp(&a.fitness).then(a.other(pivot).cmp(&b.other(pivot))));
        accepted.truncate(cap - 1);
        accepted.sort_by_key(|(e, _)| e.other(pivot));

        let members: Vec<usize> = accepted.iter().map(|(e, _)| e.other(pivot)).collect();
        unassigned.retain(|c| members.binary_search(c).is_err());
        clusters.push(Cluster { pivot, members });
        for (edge, companion) in accepted {
            edges.push(edge);
            companions.push(companion);
        }
    }

    let mut pivots: Vec<usize> = clusters.iter().map(|c| c.pivot).collect();
    pivots.sort_unstable();
    let pairs: Vec<(usize, usize)> = pivots
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| pivots[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let cross: Vec<(ArxInvariant, ArxInvariant)> = pairs
        .par_iter()
        .map(|&(a, b)| best_direction(panel, a, b, &train, &config.arx))
        .collect::<Result<_>>()?;
    pair_fit_count += 2 * cross.len();
    for (edge, companion) in cross.into_iter().filter(|(e, _)| e.fitness >= config.fitness_min) {
        edges.push(edge);
        companions.push(companion);
    }

    Ok(InvariantGraph {
        channel_names: panel.channel_names().to_vec(),
        clusters,
        edges,
        companions,
        fitted_on: train,
        config: config.clone(),
        pivot_sequence,
        constant_channels: constant,
        pair_fit_count,
    })
}
