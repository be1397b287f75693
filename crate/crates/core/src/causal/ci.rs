//! Conditional-independence kernels.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use super::LaggedVariable;
use crate::error::{RcaError, Result};

/// Ridge added to a singular conditioning block.
pub const PARTIAL_CORRELATION_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartialCorrelation {
    pub rho: f64,
    /// The correlation block was singular and had to be ridged.
    pub regularized: bool,
}

/// Pearson correlation matrix of a set of columns.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    corr: DMatrix<f64>,
    n_samples: usize,
}

impl CorrelationMatrix {
    /// Fails with `DegenerateChannel` when a column has zero variance.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(RcaError::MalformedInput("columns differ in length".into()));
        }
        let centered: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / n as f64;
                c.iter().map(|v| v - m).collect()
            })
            .collect();
        let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        for (i, norm) in norms.iter().enumerate() {
            if !(*norm > 1e-12 * (n as f64).sqrt()) {
                return Err(RcaError::DegenerateChannel(format!("variable {i}")));
            }
        }
        let mut corr = DMatrix::identity(k, k);
        for i in 0..k {
            for j in i + 1..k {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        Ok(Self { corr, n_samples: n })
    }

    /// Builds from a covariance matrix, e.g. a model's population covariance.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Self {
        let k = cov.nrows();
        let corr = DMatrix::from_fn(k, k, |i, j| cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt());
        Self { corr, n_samples: 0 }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.corr.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.corr[(i, j)]
    }

    /// Correlation of `i` and `j` with `cond` partialled out, read off the
    /// inverse of the `[i, j, cond]` block. The pair is put in ascending
    /// order first so the result is exactly symmetric.
    pub fn partial(&self, i: usize, j: usize, cond: &[usize]) -> PartialCorrelation {
        if i == j {
            return PartialCorrelation { rho: 1.0, regularized: false };
        }
        if cond.is_empty() {
            return PartialCorrelation { rho: self.corr[(i, j)], regularized: false };
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let mut idx = Vec::with_capacity(cond.len() + 2);
        idx.push(a);
        idx.push(b);
        idx.extend_from_slice(cond);
        let m = idx.len();
        let block = DMatrix::from_fn(m, m, |r, c| self.corr[(idx[r], idx[c])]);
        // The block is a correlation matrix, so a pivot near zero means a
        // (numerically) singular conditioning set.
        let well_posed = |ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>| ch.l_dirty().diagonal().min() > 1e-7;
        let (precision, regularized) = match block.clone().cholesky().filter(well_posed) {
            Some(ch) => (ch.inverse(), false),
            None => {
                let ridged = block + DMatrix::identity(m, m) * PARTIAL_CORRELATION_RIDGE;
                match ridged.clone().cholesky() {
                    Some(ch) => (ch.inverse(), true),
                    None => (ridged.pseudo_inverse(1e-12).expect("pseudo-inverse of a finite matrix"), true),
                }
            }
        };
        let denom = (precision[(0, 0)] * precision[(1, 1)]).sqrt();
        let rho = if denom > 0.0 { (-precision[(0, 1)] / denom).clamp(-1.0, 1.0) } else { 0.0 };
        PartialCorrelation { rho, regularized }
    }
}

/// Partial correlation of columns `i` and `j` of `data` given `cond`.
pub fn partial_correlation(data: &[Vec<f64>], i: usize, j: usize, cond: &[usize]) -> Result<PartialCorrelation> {
    let n = data.first().map_or(0, Vec::len);
    if n <= cond.len() + 3 {
        return Err(RcaError::InsufficientData(format!(
            "{n} samples for a conditioning set of {}",
            cond.len()
        )));
    }
    let mut used: Vec<usize> = vec![i, j];
    used.extend_from_slice(cond);
    used.sort_unstable();
    used.dedup();
    let columns: Vec<Vec<f64>> = used.iter().map(|&c| data[c].clone()).collect();
    let corr = CorrelationMatrix::from_columns(&columns)?;
    let pos = |c: usize| used.binary_search(&c).expect("column is in the used set");
    let cond_pos: Vec<usize> = cond.iter().map(|&c| pos(c)).collect();
    Ok(corr.partial(pos(i), pos(j), &cond_pos))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiDecision {
    Independent,
    Dependent,
}

/// Fisher z statistic `sqrt(n - |S| - 3) * atanh(rho)`.
pub fn fisher_z(rho: f64, n: usize, cond_size: usize) -> Result<f64> {
    if n <= cond_size + 3 {
        return Err(RcaError::InsufficientData(format!("{n} samples for a conditioning set of {cond_size}")));
    }
    let dof = (n - cond_size - 3) as f64;
    Ok(if rho.abs() >= 1.0 { f64::INFINITY.copysign(rho) } else { dof.sqrt() * rho.atanh() })
}

/// Two-sided critical value `Phi^-1(1 - alpha / 2)`.
pub fn critical_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Fisher-z test: independent iff `|z| <= Phi^-1(1 - alpha / 2)`.
/// `|rho| = 1` is always dependent.
pub fn ci_test(rho: f64, n: usize, cond_size: usize, alpha: f64) -> Result<CiDecision> {
    let z = fisher_z(rho, n, cond_size)?;
    if rho.abs() >= 1.0 {
        return Ok(CiDecision::Dependent);
    }
    Ok(if z.abs() <= critical_value(alpha) { CiDecision::Independent } else { CiDecision::Dependent })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiOutcome {
    pub independent: bool,
    /// Partial correlation behind the decision.
    pub rho: f64,
}

/// A conditional-independence test over lagged variables.
pub trait CiTest: Sync {
    fn test(&self, x: LaggedVariable, y: LaggedVariable, cond: &[LaggedVariable]) -> Result<CiOutcome>;
}

/// Time-shifted copies of per-channel series: variable `(c, l)` at row `r`
/// is `series[c][r + tau_max - l]`.
#[derive(Clone, Debug)]
pub struct LaggedData {
    n_channels: usize,
    tau_max: usize,
    corr: CorrelationMatrix,
}

impl LaggedData {
    pub fn new(series: &[Vec<f64>], tau_max: usize) -> Result<Self> {
        let len = series.first().map_or(0, Vec::len);
        if series.iter().any(|s| s.len() != len) {
            return Err(RcaError::MalformedInput("residual series differ in length".into()));
        }
        if len <= tau_max + 3 {
            return Err(RcaError::InsufficientData(format!("{len} samples for tau_max {tau_max}")));
        }
        let rows = len - tau_max;
        let mut columns = Vec::with_capacity(series.len() * (tau_max + 1));
        for s in series {
            for lag in 0..=tau_max {
                columns.push(s[tau_max - lag..tau_max - lag + rows].to_vec());
            }
        }
        Ok(Self { n_channels: series.len(), tau_max, corr: CorrelationMatrix::from_columns(&columns)? })
    }

    pub fn n_samples(&self) -> usize {
        self.corr.n_samples()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    fn index(&self, v: LaggedVariable) -> usize {
        v.channel * (self.tau_max + 1) + v.lag
    }

    pub fn partial(&self, x: LaggedVariable, y: LaggedVariable, cond: &[LaggedVariable]) -> PartialCorrelation {
        let cond: Vec<usize> = cond.iter().map(|&v| self.index(v)).collect();
        self.corr.partial(self.index(x), self.index(y), &cond)
    }
}

/// Partial correlation with a Fisher-z decision at level `alpha`.
#[derive(Clone, Debug)]
pub struct FisherZTest {
    pub data: LaggedData,
    pub alpha: f64,
}

impl CiTest for FisherZTest {
    fn test(&self, x: LaggedVariable, y: LaggedVariable, cond: &[LaggedVariable]) -> Result<CiOutcome> {
        let pc = self.data.partial(x, y, cond);
        let decision = ci_test(pc.rho, self.data.n_samples(), cond.len(), self.alpha)?;
        Ok(CiOutcome { independent: decision == CiDecision::Independent, rho: pc.rho })
    }
}

/// Exact CI answers from a known covariance over contemporaneous variables:
/// independent iff the population partial correlation is below `tolerance`.
/// Stands in for an infinite sample when checking the search logic.
#[derive(Clone, Debug)]
pub struct PopulationCi {
    corr: CorrelationMatrix,
    pub tolerance: f64,
}

impl PopulationCi {
    pub fn new(covariance: &DMatrix<f64>) -> Self {
        Self { corr: CorrelationMatrix::from_covariance(covariance), tolerance: 1e-9 }
    }
}

impl CiTest for PopulationCi {
    fn test(&self, x: LaggedVariable, y: LaggedVariable, cond: &[LaggedVariable]) -> Result<CiOutcome> {
        if x.lag != 0 || y.lag != 0 || cond.iter().any(|v| v.lag != 0) {
            return Err(RcaError::MalformedInput("population oracle only covers lag-0 variables".into()));
        }
        let cond: Vec<usize> = cond.iter().map(|v| v.channel).collect();
        let rho = self.corr.partial(x.channel, y.channel, &cond).rho;
        Ok(CiOutcome { independent: rho.abs() < self.tolerance, rho })
    }
}
