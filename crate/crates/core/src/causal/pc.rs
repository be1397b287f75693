//! PC search over time-lagged variables.
//!
//! Nodes are the present-time channels `(c, 0)` and their lagged copies
//! `(c, l)` for `l` in `1..=tau_max`. Only links that end in a present-time
//! node are searched; by stationarity the neighbourhood of `(c, l)` is the
//! neighbourhood of `(c, 0)` shifted back by `l`.
//!
//! The search is order-independent ("PC-stable"): each conditioning level
//! tests against a frozen copy of the adjacencies and applies its removals
//! together at the end of the level.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ci::{CiTest, FisherZTest, LaggedData};
use super::LaggedVariable;
use crate::error::{RcaError, Result};
use crate::FORMAT_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CausalConfig {
    pub tau_max: usize,
    pub alpha: f64,
    pub max_cond: usize,
    /// Cap on conditioning subsets tried per pair and level; `None` tries
    /// them all.
    pub max_subsets: Option<usize>,
    /// Run discovery on first differences of the input series.
    pub difference: bool,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self { tau_max: 5, alpha: 0.05, max_cond: 3, max_subsets: None, difference: false }
    }
}

type PairKey = (LaggedVariable, LaggedVariable);

fn key(a: LaggedVariable, b: LaggedVariable) -> PairKey {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected result of the edge-elimination phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub n_channels: usize,
    pub tau_max: usize,
    /// Adjacencies of each present-time node: lagged variables of any
    /// channel plus contemporaneous `(other, 0)` neighbours.
    pub adjacency: Vec<BTreeSet<LaggedVariable>>,
    /// Separating set of every removed pair.
    pub sepsets: BTreeMap<PairKey, Vec<LaggedVariable>>,
    /// Weakest partial correlation seen on each retained link.
    pub statistics: BTreeMap<PairKey, f64>,
}

impl Skeleton {
    fn complete(n_channels: usize, tau_max: usize) -> Self {
        let adjacency = (0..n_channels)
            .map(|j| {
                let mut adj = BTreeSet::new();
                for c in 0..n_channels {
                    for lag in 0..=tau_max {
                        if lag == 0 && c == j {
                            continue;
                        }
                        adj.insert(LaggedVariable::new(c, lag));
                    }
                }
                adj
            })
            .collect();
        Self { n_channels, tau_max, adjacency, sepsets: BTreeMap::new(), statistics: BTreeMap::new() }
    }

    /// True when `a` and `b` are linked. Pairs of lagged variables are
    /// answered by shifting to the later one.
    pub fn adjacent(&self, a: LaggedVariable, b: LaggedVariable) -> bool {
        let (early, late) = if a.lag >= b.lag { (a, b) } else { (b, a) };
        let shifted = LaggedVariable::new(early.channel, early.lag - late.lag);
        self.adjacency[late.channel].contains(&shifted)
    }

    /// Neighbours of `v`, shifted for lagged `v` and truncated at `tau_max`.
    pub fn neighbours(&self, v: LaggedVariable) -> BTreeSet<LaggedVariable> {
        self.adjacency[v.channel]
            .iter()
            .filter(|u| u.lag + v.lag <= self.tau_max)
            .map(|u| LaggedVariable::new(u.channel, u.lag + v.lag))
            .collect()
    }

    pub fn sepset(&self, a: LaggedVariable, b: LaggedVariable) -> Option<&[LaggedVariable]> {
        self.sepsets.get(&key(a, b)).map(Vec::as_slice)
    }

    pub fn edge_count(&self) -> usize {
        let lagged: usize = self.adjacency.iter().map(|a| a.iter().filter(|v| v.lag > 0).count()).sum();
        let contemporaneous: usize = self.adjacency.iter().map(|a| a.iter().filter(|v| v.lag == 0).count()).sum();
        lagged + contemporaneous / 2
    }
}

/// Visits the `k`-subsets of `items` in lexicographic order until `visit`
/// returns `true`.
fn for_each_subset(items: &[LaggedVariable], k: usize, mut visit: impl FnMut(&[LaggedVariable]) -> Result<bool>) -> Result<()> {
    let n = items.len();
    if k > n {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut subset: Vec<LaggedVariable> = Vec::with_capacity(k);
    'outer: loop {
        subset.clear();
        subset.extend(idx.iter().map(|&i| items[i]));
        if visit(&subset)? {
            return Ok(());
        }
        let mut i = k;
        while i > 0 {
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for t in i + 1..k {
                    idx[t] = idx[t - 1] + 1;
                }
                continue 'outer;
            }
        }
        return Ok(());
    }
}

/// Edge elimination with an arbitrary CI test.
pub fn pc_skeleton_with(
    test: &dyn CiTest,
    n_channels: usize,
    tau_max: usize,
    max_cond: usize,
    max_subsets: Option<usize>,
) -> Result<Skeleton> {
    let mut skel = Skeleton::complete(n_channels, tau_max);
    if n_channels < 2 {
        skel.adjacency.iter_mut().for_each(BTreeSet::clear);
        return Ok(skel);
    }
    for level in 0..=max_cond {
        let frozen = skel.clone();
        let mut removals: Vec<(usize, LaggedVariable, Vec<LaggedVariable>)> = Vec::new();
        let mut weakest: Vec<(PairKey, f64)> = Vec::new();
        for j in 0..n_channels {
            let present = LaggedVariable::new(j, 0);
            for &u in &frozen.adjacency[j] {
                // contemporaneous pairs are visited once, from the higher channel
                if u.lag == 0 && u.channel > j {
                    continue;
                }
                let mut around_v: Vec<LaggedVariable> = frozen.adjacency[j].iter().copied().filter(|&w| w != u).collect();
                let mut around_u: Vec<LaggedVariable> = frozen.neighbours(u).into_iter().filter(|&w| w != present).collect();
                around_v.sort_unstable();
                around_u.sort_unstable();
                let mut candidates = vec![around_v];
                if candidates[0] != around_u {
                    candidates.push(around_u);
                }
                let mut separated: Option<Vec<LaggedVariable>> = None;
                let mut weakest_rho = f64::INFINITY;
                for pool in &candidates {
                    if pool.len() < level {
                        continue;
                    }
                    let mut tried = 0usize;
                    for_each_subset(pool, level, |subset| {
                        tried += 1;
                        let outcome = test.test(u, present, subset)?;
                        if outcome.rho.abs() < weakest_rho.abs() {
                            weakest_rho = outcome.rho;
                        }
                        if outcome.independent {
                            separated = Some(subset.to_vec());
                            return Ok(true);
                        }
                        Ok(max_subsets.is_some_and(|cap| tried >= cap))
                    })?;
                    if separated.is_some() || level == 0 {
                        break;
                    }
                }
                match separated {
                    Some(set) => removals.push((j, u, set)),
                    None if weakest_rho.is_finite() => weakest.push((key(u, present), weakest_rho)),
                    None => {}
                }
            }
        }
        for (k, rho) in weakest {
            let entry = skel.statistics.entry(k).or_insert(rho);
            if rho.abs() < entry.abs() {
                *entry = rho;
            }
        }
        for (j, u, set) in removals {
            skel.adjacency[j].remove(&u);
            if u.lag == 0 {
                skel.adjacency[u.channel].remove(&LaggedVariable::new(j, 0));
            }
            let k = key(u, LaggedVariable::new(j, 0));
            skel.statistics.remove(&k);
            skel.sepsets.insert(k, set);
        }
        let widest = skel.adjacency.iter().map(BTreeSet::len).max().unwrap_or(0);
        if widest <= level + 1 {
            break;
        }
    }
    Ok(skel)
}

/// Checks the sample budget and runs the Fisher-z skeleton search on
/// per-channel series.
pub fn pc_skeleton(series: &[Vec<f64>], config: &CausalConfig) -> Result<Skeleton> {
    let differenced;
    let series = if config.difference {
        differenced = difference(series);
        differenced.as_slice()
    } else {
        series
    };
    let len = series.first().map_or(0, Vec::len);
    let needed = 10 * (config.max_cond + 3);
    if len <= config.tau_max || len - config.tau_max <= needed {
        return Err(RcaError::InsufficientData(format!(
            "series of {len} samples; need more than {} for tau_max {} and max_cond {}",
            needed + config.tau_max,
            config.tau_max,
            config.max_cond
        )));
    }
    if series.len() < 2 {
        return pc_skeleton_with(&NoTest, series.len(), config.tau_max, config.max_cond, config.max_subsets);
    }
    let test = FisherZTest { data: LaggedData::new(series, config.tau_max)?, alpha: config.alpha };
    pc_skeleton_with(&test, series.len(), config.tau_max, config.max_cond, config.max_subsets)
}

/// First differences of each series.
pub fn difference(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    series.iter().map(|s| s.windows(2).map(|w| w[1] - w[0]).collect()).collect()
}

struct NoTest;

impl CiTest for NoTest {
    fn test(&self, _: LaggedVariable, _: LaggedVariable, _: &[LaggedVariable]) -> Result<super::ci::CiOutcome> {
        unreachable!("single-channel searches run no tests")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Directed,
    /// Contemporaneous link whose direction the data leave open.
    Bidirected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub cause: LaggedVariable,
    pub effect: usize,
    pub kind: EdgeKind,
    pub statistic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sepset {
    pub a: LaggedVariable,
    pub b: LaggedVariable,
    pub set: Vec<LaggedVariable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub n_channels: usize,
    pub tau_max: usize,
    pub edges: Vec<CausalEdge>,
    pub sepsets: Vec<Sepset>,
}

impl CausalGraph {
    /// Directed links between distinct channels, lags collapsed.
    pub fn directed_channel_edges(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Directed && e.cause.channel != e.effect)
            .map(|e| (e.cause.channel, e.effect))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            #[serde(flatten)]
            graph: &'a CausalGraph,
        }
        Ok(serde_json::to_string_pretty(&Doc { format_version: FORMAT_VERSION, graph: self })?)
    }

    /// Graphviz rendering; lagged links are labelled with their lag.
    pub fn to_dot(&self, names: &[String]) -> String {
        let mut out = String::from("digraph causal {\n");
        for name in names.iter().take(self.n_channels) {
            out.push_str(&format!("  \"{name}\";\n"));
        }
        for e in &self.edges {
            if e.cause.channel == e.effect {
                continue;
            }
            let (from, to) = (&names[e.cause.channel], &names[e.effect]);
            match e.kind {
                EdgeKind::Directed => {
                    out.push_str(&format!("  \"{from}\" -> \"{to}\" [label=\"lag {}\"];\n", e.cause.lag))
                }
                EdgeKind::Bidirected => out.push_str(&format!("  \"{from}\" -> \"{to}\" [dir=both];\n")),
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Orients a skeleton: lagged links point forward in time, unshielded
/// contemporaneous colliders `u -> w <- v` are oriented when `w` is not in
/// the separating set of `u` and `v`, and everything else contemporaneous
/// stays bidirected.
pub fn orient(skeleton: &Skeleton) -> CausalGraph {
    let n = skeleton.n_channels;
    let mut arrowheads: BTreeSet<(usize, usize)> = BTreeSet::new();
    for w in 0..n {
        let present = LaggedVariable::new(w, 0);
        let around: Vec<LaggedVariable> = skeleton.adjacency[w].iter().copied().collect();
        for (i, &a) in around.iter().enumerate() {
            for &b in &around[i + 1..] {
                if a.lag > 0 && b.lag > 0 {
                    continue;
                }
                if a.channel == b.channel && a.lag == b.lag {
                    continue;
                }
                if skeleton.adjacent(a, b) {
                    continue;
                }
                let Some(sep) = skeleton.sepset(a, b) else { continue };
                if sep.contains(&present) {
                    continue;
                }
                for v in [a, b] {
                    if v.lag == 0 {
                        arrowheads.insert((v.channel, w));
                    }
                }
            }
        }
    }

    let stat = |a: LaggedVariable, b: LaggedVariable| skeleton.statistics.get(&key(a, b)).copied().unwrap_or(f64::NAN);
    let mut edges = Vec::new();
    for effect in 0..n {
        let present = LaggedVariable::new(effect, 0);
        for &cause in &skeleton.adjacency[effect] {
            if cause.lag > 0 {
                edges.push(CausalEdge { cause, effect, kind: EdgeKind::Directed, statistic: stat(cause, present) });
                continue;
            }
            let (i, j) = (cause.channel, effect);
            let into_j = arrowheads.contains(&(i, j));
            let into_i = arrowheads.contains(&(j, i));
            let statistic = stat(cause, present);
            if into_j && !into_i {
                edges.push(CausalEdge { cause, effect, kind: EdgeKind::Directed, statistic });
            } else if !into_j && !into_i || into_j && into_i {
                if i < j {
                    edges.push(CausalEdge { cause, effect, kind: EdgeKind::Bidirected, statistic });
                }
            }
        }
    }
    let sepsets = skeleton.sepsets.iter().map(|(&(a, b), set)| Sepset { a, b, set: set.clone() }).collect();
    CausalGraph { n_channels: n, tau_max: skeleton.tau_max, edges, sepsets }
}

/// Skeleton search followed by orientation.
pub fn discover(series: &[Vec<f64>], config: &CausalConfig) -> Result<CausalGraph> {
    Ok(orient(&pc_skeleton(series, config)?))
}
