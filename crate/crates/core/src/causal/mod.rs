//! Time-lagged constraint-based causal discovery.
//!
//! Partial correlation with a Fisher z test decides conditional
//! independence; a PC-style search over lagged variables removes links, and
//! orientation uses time order plus contemporaneous colliders. Latent
//! confounders are not modelled, so contemporaneous links without collider
//! evidence stay bidirected.

mod ci;
mod pc;

use serde::{Deserialize, Serialize};

pub use ci::{
    ci_test, critical_value, fisher_z, partial_correlation, CiDecision, CiOutcome, CiTest, CorrelationMatrix,
    FisherZTest, LaggedData, PartialCorrelation, PopulationCi, PARTIAL_CORRELATION_RIDGE,
};
pub use pc::{
    difference, discover, orient, pc_skeleton, pc_skeleton_with, CausalConfig, CausalEdge, CausalGraph, EdgeKind, Sepset,
    Skeleton,
};

/// Channel `channel` observed `lag` samples in the past.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaggedVariable {
    pub channel: usize,
    pub lag: usize,
}

impl LaggedVariable {
    pub const fn new(channel: usize, lag: usize) -> Self {
        Self { channel, lag }
    }
}
