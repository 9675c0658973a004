//! Shared data model: return panels and covariance / precision estimates.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// A T×p panel of log-returns (rows are periods, columns are assets).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    values: DMatrix<f64>,
    dates: Vec<String>,
    tickers: Vec<String>,
}

impl ReturnsMatrix {
    /// Validates shape, finiteness and date ordering.
    pub fn new(values: DMatrix<f64>, dates: Vec<String>, tickers: Vec<String>) -> Result<Self> {
        let (t, p) = values.shape();
        if t < 2 || p < 2 {
            return Err(Error::InvalidInput(format!(
                "returns panel must be at least 2x2, got {t}x{p}"
            )));
        }
        if dates.len() != t {
            return Err(Error::DimensionMismatch { expected: t, found: dates.len() });
        }
        if tickers.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: tickers.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("returns contain non-finite values".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "dates not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { values, dates, tickers })
    }

    /// Builds a panel with synthetic labels `t00000…` and `X0…`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let (t, p) = values.shape();
        let dates = (0..t).map(|i| format!("t{i:06}")).collect();
        let tickers = (0..p).map(|j| format!("X{j}")).collect();
        Self::new(values, dates, tickers)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    /// Contiguous row slice `[start, end)`. Fails if fewer than two rows remain.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.n_periods() || start >= end {
            return Err(Error::InvalidInput(format!(
                "row range {start}..{end} outside panel of {} rows",
                self.n_periods()
            )));
        }
        Self::new(
            self.values.rows(start, end - start).into_owned(),
            self.dates[start..end].to_vec(),
            self.tickers.clone(),
        )
    }

    /// Rows selected by index list (used by cross-validation complements).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let values = self.values.select_rows(idx);
        let dates = idx.iter().map(|&i| self.dates[i].clone()).collect();
        Self::new(values, dates, self.tickers.clone())
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// A covariance estimate with the tuning quantities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub method: String,
    /// Shrinkage weight placed on the target, when the method has one.
    pub intensity: Option<f64>,
    pub threshold: Option<f64>,
    /// Reported by estimators whose output may be indefinite.
    pub min_eigenvalue: Option<f64>,
}

impl CovarianceEstimate {
    /// Stores the symmetric part of `matrix`.
    pub fn new(matrix: DMatrix<f64>, method: impl Into<String>) -> Self {
        Self {
            matrix: symmetrize(&matrix),
            method: method.into(),
            intensity: None,
            threshold: None,
            min_eigenvalue: None,
        }
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Direct precision-matrix estimate with the hyperparameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    pub matrix: DMatrix<f64>,
    pub method: String,
    pub hyperparams: BTreeMap<String, f64>,
    /// Off-diagonal pairs `(i, j)` with `i < j` and a non-zero entry.
    pub support: BTreeSet<(usize, usize)>,
    /// Set when the estimate has a non-positive diagonal (e.g. an all-zero Clime solution).
    pub degenerate: bool,
}

impl PrecisionEstimate {
    /// Symmetrizes `matrix`, derives the support, and flags non-positive diagonals.
    pub fn new(matrix: DMatrix<f64>, method: impl Into<String>) -> Self {
        let matrix = symmetrize(&matrix);
        let support = support_of(&matrix);
        let degenerate = matrix.diagonal().iter().any(|&d| !(d > 0.0));
        Self { matrix, method: method.into(), hyperparams: BTreeMap::new(), support, degenerate }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.hyperparams.insert(name.to_string(), value);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Rescales a precision estimated on standardized data back to the raw scale:
    /// Θ = D⁻¹ Θ_std D⁻¹ with D the diagonal of standard deviations.
    pub fn unstandardize(mut self, sd: &[f64]) -> Self {
        let p = self.dim();
        for i in 0..p {
            for j in 0..p {
                self.matrix[(i, j)] /= sd[i] * sd[j];
            }
        }
        self
    }
}

pub(crate) fn support_of(m: &DMatrix<f64>) -> BTreeSet<(usize, usize)> {
    let p = m.nrows();
    let mut s = BTreeSet::new();
    for j in 0..p {
        for i in 0..j {
            if m[(i, j)] != 0.0 {
                s.insert((i, j));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_dates() {
        let v = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let err = ReturnsMatrix::new(v, vec!["b".into(), "a".into()], vec!["x".into(), "y".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_tiny_panels() {
        let v = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        assert!(ReturnsMatrix::from_values(v).is_err());
    }

    #[test]
    fn precision_support_matches_entries() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, -0.5, 0.0, -0.5, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let est = PrecisionEstimate::new(m, "test");
        assert_eq!(est.support.len(), 1);
        assert!(est.support.contains(&(0, 1)));
        assert!(!est.degenerate);
    }

    #[test]
    fn precision_is_symmetrized() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.4, 1.0]);
        let est = PrecisionEstimate::new(m, "test");
        assert!((est.matrix[(0, 1)] - 0.3).abs() < 1e-15);
        assert_eq!(est.matrix[(0, 1)], est.matrix[(1, 0)]);
    }
}
