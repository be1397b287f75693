//! Root-cause rankers.
//!
//! All four rankers produce a [`RootCauseRanking`]: at most `N` channels in
//! non-increasing score order, ties broken by ascending channel index.

mod ig;
mod lbp;
mod tcorca;
mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::FORMAT_VERSION;

pub use ig::{broken_link_ratios, ig_rank};
pub use lbp::{exact_marginals, lbp_beliefs, lbp_ig_rank, loopy_bp, LbpOutcome, LbpParams, PairwiseMrf};
pub use tcorca::{tcorca_analyze, tcorca_rank, TcorcaAnalysis};
pub use threshold::threshold_rank;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tcorca,
    Threshold,
    Ig,
    LbpIg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tcorca, Method::Threshold, Method::Ig, Method::LbpIg];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tcorca => "tcorca",
            Method::Threshold => "threshold",
            Method::Ig => "ig",
            Method::LbpIg => "lbp-ig",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RcaError::MalformedInput(format!("unknown method `{s}` (expected tcorca, threshold, ig or lbp-ig)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub channel: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCauseRanking {
    pub method: Method,
    /// The `N` that was asked for.
    pub requested: usize,
    pub entries: Vec<RankEntry>,
    /// False when an iterative ranker stopped at its iteration cap.
    pub converged: bool,
}

impl RootCauseRanking {
    /// Sorts by score (descending, then channel ascending) and keeps `n`.
    pub fn from_scores(method: Method, scores: impl IntoIterator<Item = (usize, f64)>, n: usize) -> Self {
        let mut entries: Vec<RankEntry> = scores.into_iter().map(|(channel, score)| RankEntry { channel, score }).collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.channel.cmp(&b.channel)));
        entries.truncate(n);
        Self { method, requested: n, entries, converged: true }
    }

    pub fn empty(method: Method, n: usize) -> Self {
        Self { method, requested: n, entries: Vec::new(), converged: true }
    }

    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.channel)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `[{channel, score, rank, method}]`, ranks starting at 1.
    pub fn to_json(&self, names: &[String]) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            channel: &'a str,
            score: f64,
            rank: usize,
            method: Method,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            method: Method,
            requested: usize,
            converged: bool,
            ranking: Vec<Row<'a>>,
        }
        let ranking = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| Row { channel: &names[e.channel], score: e.score, rank: i + 1, method: self.method })
            .collect();
        let doc = Doc { format_version: FORMAT_VERSION, method: self.method, requested: self.requested, converged: self.converged, ranking };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Plain-text table for terminals.
    pub fn to_table(&self, names: &[String]) -> String {
        let width = self.entries.iter().map(|e| names[e.channel].len()).max().unwrap_or(7).max(7);
        let mut out = format!("{:>4}  {:<width$}  {:>12}\n", "rank", "channel", "score");
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{:>4}  {:<width$}  {:>12.6}\n", i + 1, names[e.channel], e.score));
        }
        out
    }
}

/// Event over `n` channels whose statuses are exactly `links`
/// (`(source, target, broken)`).
#[cfg(test)]
pub(crate) fn test_event(n: usize, links: &[(usize, usize, bool)]) -> crate::detect::AnomalyEvent {
    use crate::detect::{AnomalyEvent, LinkStatus};
    assert!(links.iter().all(|&(s, t, _)| s < n && t < n), "link outside {n} channels");
    let statuses: Vec<LinkStatus> = links
        .iter()
        .enumerate()
        .map(|(edge, &(source, target, broken))| LinkStatus {
            edge,
            source,
            target,
            window: 0..10,
            broken,
            violation_ratio: if broken { 1.0 } else { 0.0 },
            peak_residual: 0.0,
        })
        .collect();
    let mut anomalous: Vec<usize> = links.iter().filter(|l| l.2).flat_map(|l| [l.0, l.1]).collect();
    anomalous.sort_unstable();
    anomalous.dedup();
    let broken = links.iter().filter(|l| l.2).count();
    AnomalyEvent {
        window: 0..10,
        anomalous_names: anomalous.iter().map(|c| format!("ch{c}")).collect(),
        residual_series: anomalous.iter().map(|&c| (c, vec![0.0; 10])).collect(),
        anomalous_channels: anomalous,
        statuses,
        system_broken_ratio: broken as f64 / links.len().max(1) as f64,
    }
}
