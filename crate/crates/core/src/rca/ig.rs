use super::{Method, RootCauseRanking};
use crate::detect::AnomalyEvent;
use crate::invariant::InvariantGraph;

/// Broken incident edges over all incident edges, per channel; channels
/// without edges score zero.
pub fn broken_link_ratios(event: &AnomalyEvent, graph: &InvariantGraph) -> Vec<f64> {
    let mut total = vec![0usize; graph.n_channels()];
    let mut broken = vec![0usize; graph.n_channels()];
    for status in &event.statuses {
        for c in [status.source, status.target] {
            total[c] += 1;
            if status.broken {
                broken[c] += 1;
            }
        }
    }
    total.iter().zip(&broken).map(|(&t, &b)| if t == 0 { 0.0 } else { b as f64 / t as f64 }).collect()
}

/// Ranks channels by their broken-link ratio; zero scores are dropped.
pub fn ig_rank(event: &AnomalyEvent, graph: &InvariantGraph, n: usize) -> RootCauseRanking {
    let ratios = broken_link_ratios(event, graph);
    let scores = ratios.into_iter().enumerate().filter(|(_, s)| *s > 0.0);
    RootCauseRanking::from_scores(Method::Ig, scores, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rca::test_event;

    #[test]
    fn ratio_arithmetic() {
        // channel 0: 2 of 2 broken; channel 3: 1 of 3 broken
        let event = test_event(5, &[(0, 1, true), (0, 2, true), (3, 1, false), (3, 2, false), (3, 4, true)]);
        let graph = InvariantGraph::bare(5);
        let ratios = broken_link_ratios(&event, &graph);
        assert_eq!(ratios[0], 1.0);
        assert!((ratios[3] - 1.0 / 3.0).abs() < 1e-15);
        let r = ig_rank(&event, &graph, 5);
        let order: Vec<usize> = r.channels().collect();
        assert_eq!(order[0], 0);
        assert!(order.iter().position(|&c| c == 0) < order.iter().position(|&c| c == 3));
    }

    #[test]
    fn untouched_channels_are_absent() {
        let event = test_event(4, &[(0, 1, true), (2, 3, false)]);
        let r = ig_rank(&event, &InvariantGraph::bare(4), 5);
        assert_eq!(r.channels().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn star_pivot_ranks_first() {
        // Pivot 0 with spokes 1..=5; every spoke also has an intact link to
        // a neighbour, so only the pivot reaches a full ratio.
        let mut links: Vec<(usize, usize, bool)> = (1..=5).map(|s| (0, s, true)).collect();
        links.extend((1..=5).map(|s| (s, 5 + s, false)));
        let event = test_event(11, &links);
        let graph = InvariantGraph::bare(11);
        let ratios = broken_link_ratios(&event, &graph);
        for s in 1..=5 {
            assert_eq!(ratios[s], 0.5);
        }
        let r = ig_rank(&event, &graph, 3);
        assert_eq!(r.entries[0].channel, 0);
        assert_eq!(r.entries[0].score, 1.0);
    }
}
