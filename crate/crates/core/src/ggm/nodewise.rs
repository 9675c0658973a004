//! Nodewise estimators: Meinshausen–Bühlmann neighbourhood selection,
//! Greedy Prune and HybridMB, plus the shared union-and-refit step.
//!
//! All three work on the sample correlation matrix (standardized data, divisor
//! T) and map the result back to the raw scale with `Θ = D⁻¹ Θ_std D⁻¹`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::lasso::{lasso_gram, lasso_gram_ball};
use crate::error::{Error, Result};
use crate::linalg::{correlation_from_cov, scatter};
use crate::types::{PrecisionEstimate, ReturnsMatrix};

/// Ridge added to Gram matrices before conditional-variance solves.
pub const RIDGE: f64 = 1e-10;
const MIN_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSet {
    pub node: usize,
    pub neighbors: BTreeSet<usize>,
    /// Coefficients over `neighbors` in ascending index order.
    pub regression_weights: DVector<f64>,
    pub residual_variance: f64,
}

/// Sample correlation matrix and standard deviations of a panel.
pub fn standardized(r: &ReturnsMatrix) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let s = scatter(r.values());
    let (corr, sd) = correlation_from_cov(&s);
    let top = sd.iter().copied().fold(0.0, f64::max);
    if let Some(node) = sd.iter().position(|&v| v <= 1e-12 * top.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroResidualVariance { node });
    }
    Ok((corr, sd))
}

fn solve_small(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    a.lu().solve(b).unwrap_or_else(|| DVector::zeros(b.len()))
}

/// OLS of node `i` on `set` from second moments: coefficients and residual variance
/// `R_ii − R_iS (R_SS + εI)⁻¹ R_Si`.
pub fn ols_from_moments(m: &DMatrix<f64>, i: usize, set: &[usize]) -> (DVector<f64>, f64) {
    if set.is_empty() {
        return (DVector::zeros(0), m[(i, i)]);
    }
    let k = set.len();
    let mut g = DMatrix::from_fn(k, k, |a, b| m[(set[a], set[b])]);
    for d in 0..k {
        g[(d, d)] += RIDGE;
    }
    let c = DVector::from_fn(k, |a, _| m[(set[a], i)]);
    let gamma = solve_small(g, &c);
    let var = m[(i, i)] - gamma.dot(&c);
    (gamma, var)
}

pub fn conditional_variance(m: &DMatrix<f64>, i: usize, set: &[usize]) -> f64 {
    ols_from_moments(m, i, set).1
}

/// Sequential pruning: `j` is dropped when `Var(X_i|X_S) > (1 − ν)·Var(X_i|X_{S∖j})`.
pub fn prune(m: &DMatrix<f64>, i: usize, candidates: &[usize], nu: f64) -> Vec<usize> {
    let mut set: Vec<usize> = candidates.to_vec();
    for &j in candidates {
        let full = conditional_variance(m, i, &set);
        let without: Vec<usize> = set.iter().copied().filter(|&k| k != j).collect();
        let reduced = conditional_variance(m, i, &without);
        if full > (1.0 - nu) * reduced {
            set = without;
        }
    }
    set.sort_unstable();
    set
}

fn precision_from_neighborhoods(p: usize, hoods: &[NeighborhoodSet]) -> DMatrix<f64> {
    let mut theta = DMatrix::zeros(p, p);
    for h in hoods {
        let j = h.node;
        theta[(j, j)] = 1.0 / h.residual_variance;
        for (w, &k) in h.regression_weights.iter().zip(&h.neighbors) {
            theta[(k, j)] = -w / h.residual_variance;
        }
    }
    theta
}

/// Union-symmetrizes the neighbourhoods, refits each node by OLS on its final
/// neighbourhood, and assembles `Θ_·j = Γ_j / τ²_j` averaged with its transpose.
pub fn support_and_refit(hoods: &[NeighborhoodSet], m: &DMatrix<f64>) -> Result<(PrecisionEstimate, Vec<NeighborhoodSet>)> {
    let p = m.nrows();
    if hoods.len() != p || hoods.iter().enumerate().any(|(k, h)| h.node != k) {
        return Err(Error::InvalidInput("neighbourhoods must cover every node once, in order".into()));
    }
    let mut union: Vec<BTreeSet<usize>> = hoods.iter().map(|h| h.neighbors.clone()).collect();
    for h in hoods {
        for &k in &h.neighbors {
            union[k].insert(h.node);
        }
    }
    let refit: Vec<NeighborhoodSet> = union
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            let set: Vec<usize> = nb.iter().copied().collect();
            let (w, var) = ols_from_moments(m, i, &set);
            if var <= MIN_RESIDUAL * m[(i, i)] {
                return Err(Error::ZeroResidualVariance { node: i });
            }
            Ok(NeighborhoodSet { node: i, neighbors: nb, regression_weights: w, residual_variance: var })
        })
        .collect::<Result<_>>()?;
    Ok((PrecisionEstimate::new(precision_from_neighborhoods(p, &refit), "refit"), refit))
}

/// Lasso of node `j` on all others, in Gram form on the correlation matrix.
pub fn mb_neighborhood(corr: &DMatrix<f64>, j: usize, lambda: f64) -> Result<NeighborhoodSet> {
    let p = corr.nrows();
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let g = DMatrix::from_fn(p - 1, p - 1, |a, b| corr[(others[a], others[b])]);
    let c = DVector::from_fn(p - 1, |a, _| corr[(others[a], j)]);
    let mut w = DVector::zeros(p - 1);
    lasso_gram(&g, &c, lambda, &mut w)?;
    let var = corr[(j, j)] - 2.0 * w.dot(&c) + (&g * &w).dot(&w);
    if var <= MIN_RESIDUAL {
        return Err(Error::ZeroResidualVariance { node: j });
    }
    let idx: Vec<usize> = (0..p - 1).filter(|&a| w[a] != 0.0).collect();
    Ok(NeighborhoodSet {
        node: j,
        neighbors: idx.iter().map(|&a| others[a]).collect(),
        regression_weights: DVector::from_iterator(idx.len(), idx.iter().map(|&a| w[a])),
        residual_variance: var,
    })
}

/// Neighbourhood selection; columns `Γ_j/τ̂²_j` averaged with their transposes.
pub fn mb_estimate(r: &ReturnsMatrix, lambda: f64) -> Result<PrecisionEstimate> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("mb lambda must be >= 0, got {lambda}")));
    }
    let (corr, sd) = standardized(r)?;
    let p = corr.nrows();
    let hoods: Vec<NeighborhoodSet> =
        (0..p).into_par_iter().map(|j| mb_neighborhood(&corr, j, lambda)).collect::<Result<_>>()?;
    let est = PrecisionEstimate::new(precision_from_neighborhoods(p, &hoods), "mb");
    Ok(rename(est.unstandardize(&sd), "mb").with_param("lambda", lambda))
}

fn rename(mut est: PrecisionEstimate, method: &str) -> PrecisionEstimate {
    est.method = method.to_string();
    est
}

/// Greedy forward selection of `t_steps` variables for node `i` followed by pruning.
pub fn greedy_neighborhood(corr: &DMatrix<f64>, i: usize, t_steps: usize, nu: f64) -> Vec<usize> {
    let p = corr.nrows();
    // partial covariance given the current selection, updated by sweeps
    let mut c = corr.clone();
    let mut chosen: Vec<usize> = Vec::new();
    let mut in_set = vec![false; p];
    in_set[i] = true;
    for _ in 0..t_steps.min(p - 1) {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if in_set[j] {
                continue;
            }
            let cjj = c[(j, j)];
            let v = if cjj > RIDGE { c[(i, i)] - c[(i, j)].powi(2) / (cjj + RIDGE) } else { c[(i, i)] };
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((j, v));
            }
        }
        let Some((j, _)) = best else { break };
        chosen.push(j);
        in_set[j] = true;
        let cjj = c[(j, j)];
        if cjj > RIDGE {
            let col = c.column(j).into_owned();
            c.ger(-1.0 / (cjj + RIDGE), &col, &col, 1.0);
        }
    }
    prune(corr, i, &chosen, nu)
}

fn hood_from_set(i: usize, set: Vec<usize>) -> NeighborhoodSet {
    NeighborhoodSet { node: i, neighbors: set.into_iter().collect(), regression_weights: DVector::zeros(0), residual_variance: 1.0 }
}

/// Greedy Prune: greedy neighbourhoods, union, OLS refit.
pub fn greedy_prune_estimate(r: &ReturnsMatrix, t_steps: usize, nu: f64) -> Result<PrecisionEstimate> {
    if t_steps == 0 || !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidInput(format!("greedy needs t_steps >= 1 and nu in (0,1), got {t_steps}, {nu}")));
    }
    let (corr, sd) = standardized(r)?;
    let p = corr.nrows();
    let hoods: Vec<NeighborhoodSet> =
        (0..p).into_par_iter().map(|i| hood_from_set(i, greedy_neighborhood(&corr, i, t_steps, nu))).collect();
    let (est, _) = support_and_refit(&hoods, &corr)?;
    Ok(rename(est.unstandardize(&sd), "greedy").with_param("t_steps", t_steps as f64).with_param("nu", nu))
}

/// HybridMB candidate set for node `i` before pruning: the best single
/// predictor `j` plus the support of the L1-ball regression on the
/// preconditioned variables `X_k/√Var(X_k|X_j)`, with `X_j`'s coefficient free.
pub fn hybrid_candidates(corr: &DMatrix<f64>, i: usize, lambda: f64) -> Result<(usize, Vec<usize>)> {
    let p = corr.nrows();
    let mut j = usize::MAX;
    let mut best = f64::INFINITY;
    for k in 0..p {
        if k == i {
            continue;
        }
        let v = corr[(i, i)] - corr[(i, k)].powi(2) / (corr[(k, k)] + RIDGE);
        if v < best {
            best = v;
            j = k;
        }
    }
    let others: Vec<usize> = (0..p)
        .filter(|&k| k != i && k != j && corr[(k, k)] - corr[(k, j)].powi(2) / (corr[(j, j)] + RIDGE) > RIDGE)
        .collect();
    let v: Vec<f64> = others.iter().map(|&k| corr[(k, k)] - corr[(k, j)].powi(2) / (corr[(j, j)] + RIDGE)).collect();
    let rjj = corr[(j, j)] + RIDGE;
    let n = others.len();
    // moments of the preconditioned variables after profiling out X_j
    let g = DMatrix::from_fn(n, n, |a, b| {
        let (ka, kb) = (others[a], others[b]);
        (corr[(ka, kb)] - corr[(ka, j)] * corr[(kb, j)] / rjj) / (v[a] * v[b]).sqrt()
    });
    let c = DVector::from_fn(n, |a, _| {
        let k = others[a];
        (corr[(i, k)] - corr[(i, j)] * corr[(k, j)] / rjj) / v[a].sqrt()
    });
    let w = lasso_gram_ball(&g, &c, lambda)?;
    // coefficients below the solver resolution count as zero
    let mut cand: Vec<usize> = (0..n).filter(|&a| w[a].abs() > 1e-9).map(|a| others[a]).collect();
    cand.push(j);
    cand.sort_unstable();
    Ok((j, cand))
}

pub fn hybrid_neighborhood(corr: &DMatrix<f64>, i: usize, lambda: f64, nu: f64) -> Result<Vec<usize>> {
    let (_, cand) = hybrid_candidates(corr, i, lambda)?;
    Ok(prune(corr, i, &cand, nu))
}

pub fn hybrid_mb_estimate(r: &ReturnsMatrix, lambda: f64, nu: f64) -> Result<PrecisionEstimate> {
    if r.n_periods() < 3 {
        return Err(Error::TooFewRows { required: 3, rows: r.n_periods() });
    }
    if !(lambda > 0.0) || !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidInput(format!("hybridmb needs lambda > 0 and nu in (0,1), got {lambda}, {nu}")));
    }
    let (corr, sd) = standardized(r)?;
    let p = corr.nrows();
    let hoods: Vec<NeighborhoodSet> = (0..p)
        .into_par_iter()
        .map(|i| hybrid_neighborhood(&corr, i, lambda, nu).map(|s| hood_from_set(i, s)))
        .collect::<Result<_>>()?;
    let (est, _) = support_and_refit(&hoods, &corr)?;
    Ok(rename(est.unstandardize(&sd), "hybridmb").with_param("lambda", lambda).with_param("nu", nu))
}
