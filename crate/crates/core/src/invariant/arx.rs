//! Pairwise ARX invariants.
//!
//! An invariant predicts a target indicator from its own recent past and a
//! delayed window of a source indicator:
//!
//! ```text
//! y(t) = sum_{i=1..n} a_i y(t-i) + sum_{j=0..m} b_j . phi(x(t-k-j)) + c
//! ```
//!
//! `phi` is either the identity or the degree-two map `x -> (x, x^2)`.
//! Coefficients come from ordinary least squares on one-step-ahead
//! residuals, solved through an SVD so rank-deficient regressors fall back
//! to the minimum-norm solution. The delay `k` is scanned over
//! `0..=max_delay` and the best-fitting one kept.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::panel::{TimeSeriesPanel, CONSTANT_STD_EPS};

/// Smallest residual envelope an invariant may carry.
pub const MIN_RESIDUAL_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    #[default]
    Linear,
    /// `x -> (x, x^2)` on every exogenous lag.
    Quadratic,
}

impl FeatureMap {
    /// Regressors produced per exogenous lag.
    pub fn width(self) -> usize {
        match self {
            FeatureMap::Linear => 1,
            FeatureMap::Quadratic => 2,
        }
    }
}

/// Model orders: `ar` autoregressive lags, exogenous lags `0..=exo`, and
/// the largest input delay searched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArxOrders {
    pub ar: usize,
    pub exo: usize,
    pub max_delay: usize,
}

impl ArxOrders {
    pub const fn new(ar: usize, exo: usize, max_delay: usize) -> Self {
        Self { ar, exo, max_delay }
    }

    /// First row (relative to a training start) at which every delay in the
    /// search has all of its lags available.
    pub fn search_warm_up(&self) -> usize {
        self.ar.max(self.max_delay + self.exo)
    }
}

impl Default for ArxOrders {
    fn default() -> Self {
        Self::new(0, 2, 5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArxSettings {
    pub orders: ArxOrders,
    pub feature_map: FeatureMap,
    /// Multiplier on the largest absolute training residual that sets the
    /// residual envelope.
    pub tol_factor: f64,
}

impl Default for ArxSettings {
    fn default() -> Self {
        Self { orders: ArxOrders::default(), feature_map: FeatureMap::Linear, tol_factor: 1.1 }
    }
}

/// One fitted relationship `source -> target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArxInvariant {
    pub source: usize,
    pub target: usize,
    pub ar_order: usize,
    pub exo_order: usize,
    pub delay: usize,
    pub feature_map: FeatureMap,
    /// AR terms, then exogenous terms (lag-major, feature-minor), then the
    /// intercept.
    pub coeffs: Vec<f64>,
    pub fitness: f64,
    pub residual_threshold: f64,
    /// Rows whose one-step residuals were minimized.
    pub fitted_on: Range<usize>,
    /// The regressor matrix was rank deficient and the minimum-norm
    /// solution was used.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl ArxInvariant {
    /// Earliest row at which a prediction has every lag available.
    pub fn warm_up(&self) -> usize {
        self.ar_order.max(self.delay + self.exo_order)
    }

    pub fn ar_coeffs(&self) -> &[f64] {
        &self.coeffs[..self.ar_order]
    }

    pub fn exo_coeffs(&self) -> &[f64] {
        &self.coeffs[self.ar_order..self.coeffs.len() - 1]
    }

    pub fn intercept(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    pub fn touches(&self, channel: usize) -> bool {
        self.source == channel || self.target == channel
    }

    /// The endpoint opposite `channel`.
    pub fn other(&self, channel: usize) -> usize {
        if self.source == channel {
            self.target
        } else {
            self.source
        }
    }

    fn predict_at(&self, x: &[f64], y: &[f64], t: usize) -> f64 {
        let mut acc = self.intercept();
        for (i, a) in self.ar_coeffs().iter().enumerate() {
            acc += a * y[t - i - 1];
        }
        let width = self.feature_map.width();
        for (j, b) in self.exo_coeffs().chunks(width).enumerate() {
            let u = x[t - self.delay - j];
            acc += b[0] * u;
            if width == 2 {
                acc += b[1] * u * u;
            }
        }
        acc
    }
}

fn n_params(ar: usize, exo: usize, map: FeatureMap) -> usize {
    ar + (exo + 1) * map.width() + 1
}

fn regressor_row(row: &mut [f64], x: &[f64], y: &[f64], t: usize, ar: usize, exo: usize, delay: usize, map: FeatureMap) {
    let mut col = 0;
    for i in 1..=ar {
        row[col] = y[t - i];
        col += 1;
    }
    for j in 0..=exo {
        let u = x[t - delay - j];
        row[col] = u;
        col += 1;
        if map == FeatureMap::Quadratic {
            row[col] = u * u;
            col += 1;
        }
    }
    row[col] = 1.0;
}

struct DelayFit {
    coeffs: Vec<f64>,
    sse: f64,
    max_abs_residual: f64,
    rank_deficient: bool,
}

fn fit_delay(x: &[f64], y: &[f64], rows: Range<usize>, ar: usize, exo: usize, delay: usize, map: FeatureMap) -> DelayFit {
    let p = n_params(ar, exo, map);
    let n = rows.len();
    let mut design = DMatrix::<f64>::zeros(n, p);
    let mut row = vec![0.0; p];
    for (r, t) in rows.clone().enumerate() {
        regressor_row(&mut row, x, y, t, ar, exo, delay, map);
        for (c, v) in row.iter().enumerate() {
            design[(r, c)] = *v;
        }
    }
    let rhs = DVector::from_iterator(n, rows.clone().map(|t| y[t]));
    let svd = design.clone().svd(true, true);
    let largest = svd.singular_values.max();
    let cutoff = largest * (n.max(p) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let coeffs = svd.solve(&rhs, cutoff).expect("both SVD factors were computed");
    let fitted = &design * &coeffs;
    let (mut sse, mut max_abs) = (0.0_f64, 0.0_f64);
    for (obs, pred) in rhs.iter().zip(fitted.iter()) {
        let r = obs - pred;
        sse += r * r;
        max_abs = max_abs.max(r.abs());
    }
    DelayFit { coeffs: coeffs.iter().copied().collect(), sse, max_abs_residual: max_abs, rank_deficient: rank < p }
}

/// Normalized-error fitness `1 - sqrt(SSE / SST)`.
pub fn fitness_score(sse: f64, sst: f64) -> f64 {
    1.0 - (sse / sst).sqrt()
}

/// Fits `source -> target` on `train`, scanning delays `0..=max_delay`.
///
/// Every delay is fitted on the same rows (`train.start + search warm-up`
/// to `train.end`) so fitness scores are comparable; ties keep the smaller
/// delay.
pub fn fit_arx(
    panel: &TimeSeriesPanel,
    source: usize,
    target: usize,
    train: Range<usize>,
    settings: &ArxSettings,
) -> Result<ArxInvariant> {
    let ArxOrders { ar, exo, max_delay } = settings.orders;
    if train.end > panel.len() || train.is_empty() {
        return Err(RcaError::InvalidWindow(format!("training range {train:?} outside 0..{}", panel.len())));
    }
    let needed = 10 * (ar + exo + 2);
    if train.len() <= needed {
        return Err(RcaError::InsufficientData(format!(
            "training range of {} rows must exceed {needed} for orders ({ar}, {exo})",
            train.len()
        )));
    }
    let rows = train.start + settings.orders.search_warm_up()..train.end;
    let p = n_params(ar, exo, settings.feature_map);
    if rows.len() <= p {
        return Err(RcaError::InsufficientData(format!(
            "{} usable rows after warm-up for {p} parameters",
            rows.len()
        )));
    }
    let x = panel.channel(source);
    let y = panel.channel(target);
    let ys = &y[rows.clone()];
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst.sqrt() <= CONSTANT_STD_EPS * (ys.len() as f64).sqrt() * mean.abs().max(1.0) {
        return Err(RcaError::DegenerateChannel(panel.channel_names()[target].clone()));
    }

    let mut best: Option<(usize, DelayFit)> = None;
    for delay in 0..=max_delay {
        let fit = fit_delay(x, y, rows.clone(), ar, exo, delay, settings.feature_map);
        if best.as_ref().is_none_or(|(_, b)| fit.sse < b.sse) {
            best = Some((delay, fit));
        }
    }
    let (delay, fit) = best.expect("at least one delay is scanned");
    if fit.rank_deficient {
        log::debug!("rank-deficient regressors for {source} -> {target}; using minimum-norm solution");
    }
    Ok(ArxInvariant {
        source,
        target,
        ar_order: ar,
        exo_order: exo,
        delay,
        feature_map: settings.feature_map,
        coeffs: fit.coeffs,
        fitness: fitness_score(fit.sse, sst),
        residual_threshold: (settings.tol_factor * fit.max_abs_residual).max(MIN_RESIDUAL_THRESHOLD),
        fitted_on: rows,
        rank_deficient: fit.rank_deficient,
    })
}

/// One-step-ahead residuals `y(t) - y_hat(t)` for every `t` in `range`.
pub fn predict_residuals(inv: &ArxInvariant, panel: &TimeSeriesPanel, range: Range<usize>) -> Result<Vec<f64>> {
    if range.start < inv.warm_up() {
        return Err(RcaError::InvalidWindow(format!(
            "range starts at {} but the invariant needs {} warm-up samples",
            range.start,
            inv.warm_up()
        )));
    }
    if range.end > panel.len() {
        return Err(RcaError::InvalidWindow(format!("range {range:?} outside 0..{}", panel.len())));
    }
    let x = panel.channel(inv.source);
    let y = panel.channel(inv.target);
    Ok(range.map(|t| y[t] - inv.predict_at(x, y, t)).collect())
}

/// Fitness of `inv` re-evaluated on `range` with its stored coefficients.
pub fn recompute_fitness(inv: &ArxInvariant, panel: &TimeSeriesPanel, range: Range<usize>) -> Result<f64> {
    let residuals = predict_residuals(inv, panel, range.clone())?;
    let ys = &panel.channel(inv.target)[range];
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(fitness_score(sse, sst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn panel_of(x: Vec<f64>, y: Vec<f64>) -> TimeSeriesPanel {
        TimeSeriesPanel::from_columns(vec!["x".into(), "y".into()], vec![x, y]).unwrap()
    }

    fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    // y(t) = a y(t-1) + b x(t-d) + c + noise
    fn planted(a: f64, b: f64, c: f64, d: usize, noise: f64, n: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = white(n, &mut rng);
        let mut y = vec![0.0; n];
        for t in 0..n {
            let prev = if t > 0 { y[t - 1] } else { 0.0 };
            let u = if t >= d { x[t - d] } else { 0.0 };
            let e: f64 = rng.sample(StandardNormal);
            y[t] = a * prev + b * u + c + noise * e;
        }
        panel_of(x, y)
    }

    /// Normal equations solved by Gauss-Jordan elimination with partial
    /// pivoting.
    fn normal_equations(design: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
        let p = design[0].len();
        let mut m = vec![vec![0.0; p + 1]; p];
        for (row, &y) in design.iter().zip(rhs) {
            for i in 0..p {
                for j in 0..p {
                    m[i][j] += row[i] * row[j];
                }
                m[i][p] += row[i] * y;
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            for r in 0..p {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for k in col..=p {
                        m[r][k] -= f * m[col][k];
                    }
                }
            }
        }
        (0..p).map(|i| m[i][p] / m[i][i]).collect()
    }

    fn oracle_fit(panel: &TimeSeriesPanel, inv: &ArxInvariant) -> Vec<f64> {
        let (x, y) = (panel.channel(inv.source), panel.channel(inv.target));
        let p = inv.coeffs.len();
        let design: Vec<Vec<f64>> = inv
            .fitted_on
            .clone()
            .map(|t| {
                let mut row = vec![0.0; p];
                regressor_row(&mut row, x, y, t, inv.ar_order, inv.exo_order, inv.delay, inv.feature_map);
                row
            })
            .collect();
        let rhs: Vec<f64> = inv.fitted_on.clone().map(|t| y[t]).collect();
        normal_equations(&design, &rhs)
    }

    #[test]
    fn identity_relationship() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = white(300, &mut rng);
        let panel = panel_of(x.clone(), x);
        let settings = ArxSettings { orders: ArxOrders::new(0, 0, 0), ..Default::default() };
        let inv = fit_arx(&panel, 0, 1, 0..300, &settings).unwrap();
        assert!((inv.exo_coeffs()[0] - 1.0).abs() < 1e-9);
        assert!(inv.intercept().abs() < 1e-9);
        assert!(inv.fitness >= 1.0 - 1e-6);
        assert!(inv.residual_threshold >= MIN_RESIDUAL_THRESHOLD);
    }

    #[test]
    fn recovers_planted_model_and_delay() {
        let panel = planted(0.5, 0.3, 0.1, 2, 0.0, 500, 7);
        let settings = ArxSettings { orders: ArxOrders::new(1, 0, 3), ..Default::default() };
        let inv = fit_arx(&panel, 0, 1, 0..500, &settings).unwrap();
        assert_eq!(inv.delay, 2);
        for (got, want) in inv.coeffs.iter().zip([0.5, 0.3, 0.1]) {
            assert!((got - want).abs() < 1e-6, "{:?}", inv.coeffs);
        }
        for (got, want) in inv.coeffs.iter().zip(oracle_fit(&panel, &inv)) {
            assert!((got - want).abs() < 1e-9);
        }
        let r = predict_residuals(&inv, &panel, inv.fitted_on.clone()).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn independent_noise_fits_poorly() {
        let settings = ArxSettings::default();
        let mut fits: Vec<f64> = (0..100)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let panel = panel_of(white(2000, &mut rng), white(2000, &mut rng));
                fit_arx(&panel, 0, 1, 0..2000, &settings).unwrap().fitness
            })
            .collect();
        fits.sort_by(f64::total_cmp);
        assert!(fits[98] < 0.2, "99th percentile {}", fits[98]);
    }

    #[test]
    fn level_shift_residual_matches_steady_state() {
        let panel = planted(0.5, 0.3, 0.1, 2, 0.0, 500, 3);
        let settings = ArxSettings { orders: ArxOrders::new(1, 0, 3), ..Default::default() };
        let inv = fit_arx(&panel, 0, 1, 0..400, &settings).unwrap();
        let delta = 2.0;
        let mut cols = panel.columns().to_vec();
        for v in &mut cols[1][400..] {
            *v += delta;
        }
        let shifted = panel.with_values(cols).unwrap();
        let r = predict_residuals(&inv, &shifted, 401..500).unwrap();
        let steady = delta * (1.0 - inv.ar_coeffs().iter().sum::<f64>());
        assert!(r.iter().all(|v| (v - steady).abs() < 1e-6));
    }

    #[test]
    fn zero_inputs_give_zero_residuals() {
        let panel = panel_of(vec![0.0; 50], vec![0.0; 50]);
        let inv = ArxInvariant {
            source: 0,
            target: 1,
            ar_order: 1,
            exo_order: 1,
            delay: 1,
            feature_map: FeatureMap::Linear,
            coeffs: vec![0.4, 1.0, -0.2, 0.0],
            fitness: 1.0,
            residual_threshold: 1.0,
            fitted_on: 2..50,
            rank_deficient: false,
        };
        assert!(predict_residuals(&inv, &panel, 2..50).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(predict_residuals(&inv, &panel, 1..50), Err(RcaError::InvalidWindow(_))));
    }

    #[test]
    fn quadratic_map_captures_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = white(400, &mut rng);
        let y = x.iter().map(|v| v * v - 0.5 * v).collect();
        let panel = panel_of(x, y);
        let linear = fit_arx(&panel, 0, 1, 0..400, &ArxSettings::default()).unwrap();
        let quad = fit_arx(&panel, 0, 1, 0..400, &ArxSettings { feature_map: FeatureMap::Quadratic, ..Default::default() })
            .unwrap();
        assert!(quad.fitness > 1.0 - 1e-6);
        assert!(linear.fitness < 0.5);
    }

    #[test]
    fn constant_target_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let panel = panel_of(white(200, &mut rng), vec![3.0; 200]);
        assert!(matches!(fit_arx(&panel, 0, 1, 0..200, &ArxSettings::default()), Err(RcaError::DegenerateChannel(_))));
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        // A constant source makes the exogenous column collinear with the
        // intercept.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let panel = panel_of(vec![1.0; 200], white(200, &mut rng));
        let inv = fit_arx(&panel, 0, 1, 0..200, &ArxSettings::default()).unwrap();
        assert!(inv.rank_deficient);
        assert!(inv.coeffs.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn short_training_range_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let panel = panel_of(white(40, &mut rng), white(40, &mut rng));
        assert!(matches!(fit_arx(&panel, 0, 1, 0..40, &ArxSettings::default()), Err(RcaError::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn noise_free_pairs_are_recovered(a in -0.8..0.8f64, b in 0.2..2.0f64, c in -1.0..1.0f64, d in 0usize..=5, seed in 0u64..1000) {
            let panel = planted(a, b, c, d, 0.0, 600, seed);
            let settings = ArxSettings { orders: ArxOrders::new(1, 0, 5), ..Default::default() };
            let inv = fit_arx(&panel, 0, 1, 0..600, &settings).unwrap();
            prop_assert_eq!(inv.delay, d);
            for (got, want) in inv.coeffs.iter().zip([a, b, c]) {
                prop_assert!((got - want).abs() < 1e-6);
            }
            let stored = inv.fitness;
            let again = recompute_fitness(&inv, &panel, inv.fitted_on.clone()).unwrap();
            prop_assert!((stored - again).abs() < 1e-9);
        }

        #[test]
        fn noisy_pairs_match_oracle(a in -0.6..0.6f64, d in 1usize..=4, seed in 0u64..1000) {
            let panel = planted(a, 1.0, 0.0, d, 0.1, 2000, seed);
            let settings = ArxSettings { orders: ArxOrders::new(1, 0, 5), ..Default::default() };
            let inv = fit_arx(&panel, 0, 1, 0..2000, &settings).unwrap();
            prop_assert_eq!(inv.delay, d);
            for (got, want) in inv.coeffs.iter().zip([a, 1.0, 0.0]) {
                prop_assert!((got - want).abs() < 5e-2);
            }
            for (got, want) in inv.coeffs.iter().zip(oracle_fit(&panel, &inv)) {
                prop_assert!((got - want).abs() < 1e-8);
            }
        }
    }
}
