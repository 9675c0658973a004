//! Graphical lasso by primal block coordinate ascent.
//!
//! With `Θ₁₁` fixed, the penalized likelihood restricted to column `j` is
//! maximized exactly by the lasso
//! `θ₁₂ = argmin ½ w₂₂ θᵀΘ₁₁⁻¹θ + s₁₂ᵀθ + ρ‖θ‖₁`, `θ₂₂ = 1/w₂₂ + θ₁₂ᵀΘ₁₁⁻¹θ₁₂`,
//! where `w₂₂ = s₂₂ + ρ`. `Θ₁₁⁻¹` comes from the running inverse `W = Θ⁻¹`,
//! which is refreshed by rank-one updates. Every iterate stays positive
//! definite and the objective never decreases.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::lasso::lasso_gram_tol;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::types::PrecisionEstimate;

pub const GLASSO_TOL: f64 = 1e-5;
pub const GLASSO_MAX_SWEEPS: usize = 1_000;
/// Floor of the inner lasso tolerance, relative to the largest diagonal entry of Θ.
const INNER_REL_TOL: f64 = 1e-10;
/// Inner tolerance as a fraction of the previous sweep's largest change.
const INNER_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GlassoResult {
    pub estimate: PrecisionEstimate,
    /// Objective after initialisation and after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
}

/// `log det Θ − tr(SΘ) − ρ‖Θ‖₁` (diagonal penalized). `−∞` if Θ is not PD.
pub fn glasso_objective(theta: &DMatrix<f64>, s: &DMatrix<f64>, rho: f64) -> f64 {
    let Some(chol) = Cholesky::new(theta.clone()) else {
        return f64::NEG_INFINITY;
    };
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    logdet - theta.component_mul(s).sum() - rho * theta.iter().map(|v| v.abs()).sum::<f64>()
}

fn others(p: usize, j: usize) -> Vec<usize> {
    (0..p).filter(|&i| i != j).collect()
}

fn inverse(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(theta.clone()).map(|c| symmetrize(&c.inverse())).ok_or(Error::NotPositiveDefinite)
}

pub fn glasso_estimate(s: &DMatrix<f64>, rho: f64) -> Result<PrecisionEstimate> {
    Ok(glasso_solve(s, rho, GLASSO_TOL)?.estimate)
}

/// Runs block coordinate ascent until the largest entry change in a sweep,
/// relative to the largest diagonal entry, falls below `tol`.
pub fn glasso_solve(s: &DMatrix<f64>, rho: f64, tol: f64) -> Result<GlassoResult> {
    glasso_solve_from(s, rho, tol, None)
}

/// Glasso at each penalty, largest first, each solve started from the
/// previous solution. Results come back in the order of `rhos`.
pub fn glasso_path(s: &DMatrix<f64>, rhos: &[f64], tol: f64) -> Vec<Result<GlassoResult>> {
    let mut order: Vec<usize> = (0..rhos.len()).collect();
    order.sort_by(|&x, &y| rhos[y].total_cmp(&rhos[x]));
    let mut out: Vec<Option<Result<GlassoResult>>> = (0..rhos.len()).map(|_| None).collect();
    let mut start: Option<DMatrix<f64>> = None;
    for k in order {
        let res = glasso_solve_from(s, rhos[k], tol, start.as_ref());
        if let Ok(r) = &res {
            start = Some(r.estimate.matrix.clone());
        }
        out[k] = Some(res);
    }
    out.into_iter().map(|r| r.expect("every penalty solved")).collect()
}

/// As [`glasso_solve`], starting from `init` when it is positive definite and
/// of the right size, otherwise from `diag(1/(s_ii + ρ))`.
pub fn glasso_solve_from(s: &DMatrix<f64>, rho: f64, tol: f64, init: Option<&DMatrix<f64>>) -> Result<GlassoResult> {
    let p = s.nrows();
    if !s.is_square() || p == 0 {
        return Err(Error::InvalidInput("glasso needs a square non-empty matrix".into()));
    }
    if !(rho >= 0.0) {
        return Err(Error::InvalidInput(format!("glasso penalty must be >= 0, got {rho}")));
    }
    let s = symmetrize(s);
    if s.diagonal().iter().any(|&d| d + rho <= 0.0) {
        return Err(Error::SingularInput("zero variance with zero penalty".into()));
    }
    if rho == 0.0 {
        let ok = Cholesky::new(s.clone())
            .map(|c| {
                let d = c.l().diagonal();
                d.min() > 1e-7 * d.max()
            })
            .unwrap_or(false);
        if !ok {
            return Err(Error::SingularInput("sample covariance is singular and rho = 0".into()));
        }
    }
    let mut theta = match init {
        Some(t) if t.shape() == s.shape() && Cholesky::new(t.clone()).is_some() => symmetrize(t),
        _ => DMatrix::from_diagonal(&s.diagonal().map(|d| 1.0 / (d + rho))),
    };
    let mut objective_trace = vec![glasso_objective(&theta, &s, rho)];
    let done = |theta: DMatrix<f64>, trace: Vec<f64>, sweeps: usize| GlassoResult {
        estimate: PrecisionEstimate::new(theta, "glasso").with_param("rho", rho),
        objective_trace: trace,
        sweeps,
    };
    if p == 1 {
        return Ok(done(theta, objective_trace, 0));
    }
    let mut last_change = f64::INFINITY;
    for sweep in 1..=GLASSO_MAX_SWEEPS {
        let mut w = inverse(&theta)?;
        let scale = theta.diagonal().amax();
        let inner_tol = (INNER_FRACTION * last_change).min(1e-2 * scale).max(INNER_REL_TOL * scale);
        let mut max_change = 0.0f64;
        for j in 0..p {
            let idx = others(p, j);
            let w12 = DVector::from_iterator(p - 1, idx.iter().map(|&i| w[(i, j)]));
            // Θ₁₁⁻¹ = W₁₁ − w₁₂w₁₂ᵀ / w₂₂
            let mut a = w.select_rows(&idx).select_columns(&idx);
            a.ger(-1.0 / w[(j, j)], &w12, &w12, 1.0);
            let a = symmetrize(&a);
            let w22 = s[(j, j)] + rho;
            let g = &a * w22;
            let c = DVector::from_iterator(p - 1, idx.iter().map(|&i| -s[(i, j)]));
            let mut th = DVector::from_iterator(p - 1, idx.iter().map(|&i| theta[(i, j)]));
            lasso_gram_tol(&g, &c, rho, &mut th, inner_tol)?;
            let a_th = &a * &th;
            let theta22 = 1.0 / w22 + th.dot(&a_th);
            for (k, &i) in idx.iter().enumerate() {
                max_change = max_change.max((theta[(i, j)] - th[k]).abs());
                theta[(i, j)] = th[k];
                theta[(j, i)] = th[k];
            }
            max_change = max_change.max((theta[(j, j)] - theta22).abs());
            theta[(j, j)] = theta22;
            // new inverse: W₁₁ = A + (Aθ)(Aθ)ᵀ·w₂₂, w₁₂ = −(Aθ)·w₂₂, w₂₂ = s₂₂ + ρ
            let mut w11 = a;
            w11.ger(w22, &a_th, &a_th, 1.0);
            for (k, &i) in idx.iter().enumerate() {
                for (l, &m) in idx.iter().enumerate() {
                    w[(i, m)] = w11[(k, l)];
                }
                w[(i, j)] = -a_th[k] * w22;
                w[(j, i)] = w[(i, j)];
            }
            w[(j, j)] = w22;
        }
        objective_trace.push(glasso_objective(&theta, &s, rho));
        last_change = max_change;
        if max_change <= tol * theta.diagonal().amax() {
            return Ok(done(theta, objective_trace, sweep));
        }
    }
    Err(Error::NonConvergence { what: "glasso", iterations: GLASSO_MAX_SWEEPS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cov(p: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| rng.random_range(-1.0..1.0));
        crate::linalg::scatter(&x)
    }

    #[test]
    fn zero_penalty_inverts() {
        let s = random_cov(6, 60, 1);
        let theta = glasso_solve(&s, 0.0, 1e-10).unwrap().estimate.matrix;
        let inv = s.clone().try_inverse().unwrap();
        assert!((&theta - &inv).amax() / inv.amax() < 1e-4);
    }

    #[test]
    fn large_penalty_decouples() {
        let s = random_cov(5, 40, 2);
        let mut top = 0.0f64;
        for j in 0..5 {
            for i in 0..j {
                top = top.max(s[(i, j)].abs());
            }
        }
        let rho = top * 1.01;
        let est = glasso_estimate(&s, rho).unwrap();
        for i in 0..5 {
            assert!((est.matrix[(i, i)] - 1.0 / (s[(i, i)] + rho)).abs() < 1e-12);
        }
        assert!(est.support.is_empty());
    }

    #[test]
    fn singular_without_penalty_is_rejected() {
        let s = random_cov(6, 4, 3);
        assert!(matches!(glasso_estimate(&s, 0.0), Err(Error::SingularInput(_))));
        assert!(glasso_estimate(&s, 0.05).is_ok());
    }

    #[test]
    fn objective_never_decreases() {
        for seed in 0..10 {
            let s = random_cov(8, 12, seed);
            let res = glasso_solve(&s, 0.02, 1e-8).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "seed {seed}");
            }
        }
    }

    #[test]
    fn zero_penalty_scale_equivariance() {
        let s = random_cov(5, 50, 7);
        let a = glasso_solve(&s, 0.0, 1e-12).unwrap().estimate.matrix;
        let b = glasso_solve(&(&s * 4.0), 0.0, 1e-12).unwrap().estimate.matrix;
        assert!((&a / 4.0 - b).amax() < 1e-8 * a.amax());
    }

    #[test]
    fn warm_path_matches_cold_solves() {
        let s = random_cov(8, 10, 11);
        let rhos = [0.01, 0.2, 0.05];
        let path = glasso_path(&s, &rhos, 1e-9);
        for (res, &rho) in path.iter().zip(&rhos) {
            let res = res.as_ref().unwrap();
            let cold = glasso_solve(&s, rho, 1e-9).unwrap();
            let (a, b) = (res.objective_trace.last().unwrap(), cold.objective_trace.last().unwrap());
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            for w in res.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn output_is_positive_definite() {
        let s = random_cov(10, 8, 8);
        let est = glasso_estimate(&s, 0.01).unwrap();
        assert!(Cholesky::new(est.matrix).is_some());
    }
}
