use std::ops::Range;

use super::{Method, RootCauseRanking};
use crate::error::{RcaError, Result};
use crate::panel::{ChannelStats, TimeSeriesPanel};

/// Flags channels whose largest deviation over `window`, in training
/// standard deviations, reaches `k_sigma`. Constant channels are skipped.
pub fn threshold_rank(
    panel: &TimeSeriesPanel,
    stats: &ChannelStats,
    window: Range<usize>,
    k_sigma: f64,
    n: usize,
) -> Result<RootCauseRanking> {
    if window.is_empty() || window.end > panel.len() {
        return Err(RcaError::InvalidWindow(format!("window {window:?} outside 0..{}", panel.len())));
    }
    if stats.mean.len() != panel.n_channels() {
        return Err(RcaError::ChannelMismatch("statistics do not cover the panel's channels".into()));
    }
    let scores = (0..panel.n_channels()).filter(|&c| !stats.is_constant(c)).filter_map(|c| {
        let col = &panel.channel(c)[window.clone()];
        let score = col.iter().map(|x| (x - stats.mean[c]).abs() / stats.std[c]).fold(0.0_f64, f64::max);
        (score >= k_sigma).then_some((c, score))
    });
    Ok(RootCauseRanking::from_scores(Method::Threshold, scores, n))
}
