//! Root-cause analysis for multivariate KPI time series.
//!
//! The pipeline learns pairwise ARX invariants between indicators, groups
//! them into a clustered invariant graph, flags windows where invariants
//! break, and ranks the anomalous indicators by running time-lagged causal
//! discovery on their residual series. Three baseline rankers (a KPI
//! threshold, broken-link ratio, and loopy belief propagation over the
//! invariant graph) share the same output type, and a synthetic scenario
//! generator plus scoring harness compares all four.

pub mod error;
pub mod causal;
pub mod detect;
pub mod eval;
pub mod invariant;
pub mod panel;
pub mod rca;
pub mod synth;

pub use error::{RcaError, Result};

/// Version tag written into every JSON document this crate produces.
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(RcaError::UnsupportedVersion { found, expected: FORMAT_VERSION });
    }
    Ok(())
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/panels.md")]
    mod panels {}
    #[doc = include_str!("../../../book/src/invariants.md")]
    mod invariants {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/causal.md")]
    mod causal {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
