//! Invariant learning: ARX relationships between indicator pairs and the
//! clustered graph assembled from them.

mod arx;
mod fccg;

pub use arx::{
    fit_arx, fitness_score, predict_residuals, recompute_fitness, ArxInvariant, ArxOrders, ArxSettings, FeatureMap,
    MIN_RESIDUAL_THRESHOLD,
};
pub use fccg::{fccg_cluster, fccg_cluster_with_pivots, Cluster, FccgConfig, InvariantGraph};

/// Number of `fit_arx` calls performed while `graph` was built.
pub fn graph_pair_fit_count(graph: &InvariantGraph) -> usize {
    graph.pair_fit_count()
}
