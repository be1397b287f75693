//! Loopy belief propagation over the invariant graph.
//!
//! Each channel carries a binary latent state "is a root cause". Its unary
//! potential is `[1 - a, a]` where `a` is the channel's broken-link ratio
//! (its abnormality degree). Every invariant edge couples its endpoints
//! with `[[1 - q, q], [q, 1 - q]]`, where `q` is the propagation
//! probability `p` on broken edges and `p / 4` on intact ones, so intact
//! invariants pull their endpoints toward the same state. Damped
//! sum-product messages run on a synchronous schedule; the marginal of
//! state 1 is the channel's root-cause degree.

use serde::{Deserialize, Serialize};

use super::ig::broken_link_ratios;
use super::{Method, RootCauseRanking};
use crate::detect::AnomalyEvent;
use crate::error::{RcaError, Result};
use crate::invariant::InvariantGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbpParams {
    pub propagation_prob: f64,
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LbpParams {
    fn default() -> Self {
        Self { propagation_prob: 0.5, damping: 0.3, max_iters: 100, tol: 1e-6 }
    }
}

impl LbpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.propagation_prob > 0.0
            && self.propagation_prob < 1.0
            && (0.0..1.0).contains(&self.damping)
            && self.tol > 0.0;
        if !ok {
            return Err(RcaError::MalformedInput(format!("invalid LBP parameters {self:?}")));
        }
        Ok(())
    }
}

/// Binary pairwise Markov random field.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseMrf {
    pub unary: Vec<[f64; 2]>,
    /// `(u, v, psi)` with `psi[x_u][x_v]`.
    pub edges: Vec<(usize, usize, [[f64; 2]; 2])>,
}

impl PairwiseMrf {
    /// The root-cause field for an event on `graph`.
    pub fn from_event(event: &AnomalyEvent, graph: &InvariantGraph, propagation_prob: f64) -> Self {
        let abnormality = broken_link_ratios(event, graph);
        let unary = abnormality.iter().map(|&a| [1.0 - a, a]).collect();
        let edges = event
            .statuses
            .iter()
            .map(|s| {
                let q = if s.broken { propagation_prob } else { propagation_prob / 4.0 };
                (s.source, s.target, [[1.0 - q, q], [q, 1.0 - q]])
            })
            .collect();
        Self { unary, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.unary.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbpOutcome {
    /// Marginal probability of state 1 per node.
    pub beliefs: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn normalize(m: [f64; 2]) -> [f64; 2] {
    let s = m[0] + m[1];
    if s > 0.0 {
        [m[0] / s, m[1] / s]
    } else {
        [0.5, 0.5]
    }
}

/// Damped synchronous sum-product. Messages start uniform.
pub fn loopy_bp(mrf: &PairwiseMrf, params: &LbpParams) -> LbpOutcome {
    let n = mrf.n_nodes();
    // Directed message slots: 2e is u -> v, 2e + 1 is v -> u.
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &(u, v, _)) in mrf.edges.iter().enumerate() {
        incoming[v].push(2 * e);
        incoming[u].push(2 * e + 1);
    }
    let mut messages = vec![[0.5, 0.5]; 2 * mrf.edges.len()];
    let mut converged = mrf.edges.is_empty();
    let mut iterations = 0;

    while !converged && iterations < params.max_iters {
        iterations += 1;
        let mut next = messages.clone();
        let mut max_change = 0.0_f64;
        for (e, &(u, v, psi)) in mrf.edges.iter().enumerate() {
            for (slot, from, reversed) in [(2 * e, u, false), (2 * e + 1, v, true)] {
                let mut h = mrf.unary[from];
                for &m in &incoming[from] {
                    if m ^ 1 == slot {
                        continue;
                    }
                    h[0] *= messages[m][0];
                    h[1] *= messages[m][1];
                }
                let mut out = [0.0; 2];
                for (x_to, o) in out.iter_mut().enumerate() {
                    for (x_from, hv) in h.iter().enumerate() {
                        let pot = if reversed { psi[x_to][x_from] } else { psi[x_from][x_to] };
                        *o += hv * pot;
                    }
                }
                let fresh = normalize(out);
                let old = messages[slot];
                let damped = normalize([
                    (1.0 - params.damping) * fresh[0] + params.damping * old[0],
                    (1.0 - params.damping) * fresh[1] + params.damping * old[1],
                ]);
                max_change = max_change.max((damped[0] - old[0]).abs()).max((damped[1] - old[1]).abs());
                next[slot] = damped;
            }
        }
        messages = next;
        converged = max_change < params.tol;
    }

    let beliefs = (0..n)
        .map(|i| {
            let mut b = mrf.unary[i];
            for &m in &incoming[i] {
                b[0] *= messages[m][0];
                b[1] *= messages[m][1];
            }
            normalize(b)[1]
        })
        .collect();
    LbpOutcome { beliefs, converged, iterations }
}

/// Exact marginals of state 1 by enumerating all `2^n` joint states.
pub fn exact_marginals(mrf: &PairwiseMrf) -> Result<Vec<f64>> {
    let n = mrf.n_nodes();
    if n > 24 {
        return Err(RcaError::MalformedInput(format!("{n} nodes is too many to enumerate")));
    }
    let mut mass = vec![0.0; n];
    let mut z = 0.0;
    for state in 0u32..(1 << n) {
        let bit = |i: usize| ((state >> i) & 1) as usize;
        let mut w = 1.0;
        for (i, u) in mrf.unary.iter().enumerate() {
            w *= u[bit(i)];
        }
        for &(u, v, psi) in &mrf.edges {
            w *= psi[bit(u)][bit(v)];
        }
        z += w;
        for (i, m) in mass.iter_mut().enumerate() {
            if bit(i) == 1 {
                *m += w;
            }
        }
    }
    Ok(mass.into_iter().map(|m| m / z).collect())
}

/// Runs belief propagation on the event's root-cause field.
pub fn lbp_beliefs(event: &AnomalyEvent, graph: &InvariantGraph, params: &LbpParams) -> Result<LbpOutcome> {
    params.validate()?;
    Ok(loopy_bp(&PairwiseMrf::from_event(event, graph, params.propagation_prob), params))
}

/// Ranks the event's anomalous channels by root-cause belief. A run that
/// hits `max_iters` still ranks, with `converged` cleared.
pub fn lbp_ig_rank(event: &AnomalyEvent, graph: &InvariantGraph, params: &LbpParams, n: usize) -> Result<RootCauseRanking> {
    let outcome = lbp_beliefs(event, graph, params)?;
    if !outcome.converged {
        log::warn!("belief propagation stopped after {} iterations without converging", outcome.iterations);
    }
    let scores = event.anomalous_channels.iter().map(|&c| (c, outcome.beliefs[c]));
    let mut ranking = RootCauseRanking::from_scores(Method::LbpIg, scores, n);
    ranking.converged = outcome.converged;
    Ok(ranking)
}
