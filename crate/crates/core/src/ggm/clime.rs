//! CLIME: column-wise `min ‖β‖₁` s.t. `|Sβ − e_j|∞ ≤ λ`, one linear program per column.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::simplex;
use crate::error::{Error, Result};
use crate::types::PrecisionEstimate;

#[derive(Debug, Clone)]
pub struct ClimeResult {
    pub estimate: PrecisionEstimate,
    /// Column solutions before symmetrization.
    pub raw: DMatrix<f64>,
}

/// One column over several penalties: variables `β = u − v`, constraints
/// `±(Sβ − e_j) ≤ λ`. Solutions come back in the order of `lambdas`.
pub fn clime_column_path(s: &DMatrix<f64>, j: usize, lambdas: &[f64]) -> Result<Vec<DVector<f64>>> {
    let p = s.nrows();
    let mut a = DMatrix::zeros(2 * p, 2 * p);
    for i in 0..p {
        for k in 0..p {
            a[(i, k)] = s[(i, k)];
            a[(i, p + k)] = -s[(i, k)];
            a[(p + i, k)] = -s[(i, k)];
            a[(p + i, p + k)] = s[(i, k)];
        }
    }
    // largest penalty first: sparsest solution, then warm starts downwards
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&x, &y| lambdas[y].total_cmp(&lambdas[x]));
    let bs: Vec<DVector<f64>> = order
        .iter()
        .map(|&k| {
            DVector::from_fn(2 * p, |i, _| {
                let e = if i % p == j { 1.0 } else { 0.0 };
                if i < p { lambdas[k] + e } else { lambdas[k] - e }
            })
        })
        .collect();
    let c = DVector::from_element(2 * p, 1.0);
    let sols = simplex::solve_dual_sequence(&c, &a, &bs)?;
    let mut out = vec![DVector::zeros(p); lambdas.len()];
    for (&k, sol) in order.iter().zip(sols) {
        out[k] = DVector::from_fn(p, |i, _| sol.x[i] - sol.x[p + i]);
    }
    Ok(out)
}

pub fn clime_column(s: &DMatrix<f64>, j: usize, lambda: f64) -> Result<DVector<f64>> {
    Ok(clime_column_path(s, j, &[lambda])?.remove(0))
}

/// Keeps, for each pair, the entry of smaller magnitude.
pub fn min_magnitude_symmetrize(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let p = raw.nrows();
    DMatrix::from_fn(p, p, |i, j| {
        let (a, b) = (raw[(i, j)], raw[(j, i)]);
        if a.abs() <= b.abs() {
            a
        } else {
            b
        }
    })
}

pub fn clime_solve(s: &DMatrix<f64>, lambda: f64) -> Result<ClimeResult> {
    Ok(clime_path(s, &[lambda])?.remove(0))
}

/// CLIME at each penalty in `lambdas`, sharing one warm-started solve per column.
pub fn clime_path(s: &DMatrix<f64>, lambdas: &[f64]) -> Result<Vec<ClimeResult>> {
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidInput(format!("clime lambda must be > 0, got {bad}")));
    }
    let p = s.nrows();
    let cols: Vec<Result<Vec<DVector<f64>>>> = (0..p).into_par_iter().map(|j| clime_column_path(s, j, lambdas)).collect();
    let cols: Vec<Vec<DVector<f64>>> = cols.into_iter().collect::<Result<_>>()?;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let raw = DMatrix::from_fn(p, p, |i, j| cols[j][k][i]);
            let estimate = PrecisionEstimate::new(min_magnitude_symmetrize(&raw), "clime").with_param("lambda", lambda);
            if estimate.degenerate {
                log::debug!("clime: non-positive diagonal at lambda = {lambda}");
            }
            ClimeResult { estimate, raw }
        })
        .collect())
}

pub fn clime_estimate(s: &DMatrix<f64>, lambda: f64) -> Result<PrecisionEstimate> {
    Ok(clime_solve(s, lambda)?.estimate)
}

/// `max |SΘ − I|`.
pub fn feasibility_residual(s: &DMatrix<f64>, theta: &DMatrix<f64>) -> f64 {
    let p = s.nrows();
    (s * theta - DMatrix::identity(p, p)).amax()
}
