//! Lasso by cyclic coordinate descent, in penalized and L1-ball constrained form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// `½‖y − Xw‖²/T + penalty·‖w‖₁`, or the least-squares loss under `‖w‖₁ ≤ radius`
/// when `l1_ball_radius` is set.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub penalty: f64,
    pub l1_ball_radius: Option<f64>,
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Coordinate descent on the Gram form `½wᵀGw − cᵀw + penalty·‖w‖₁`.
/// Coordinates are visited in ascending order; `w` is a warm start.
pub fn lasso_gram(g: &DMatrix<f64>, c: &DVector<f64>, penalty: f64, w: &mut DVector<f64>) -> Result<usize> {
    lasso_gram_tol(g, c, penalty, w, LASSO_TOL)
}

/// As [`lasso_gram`] with an explicit bound on the largest coordinate update.
pub fn lasso_gram_tol(g: &DMatrix<f64>, c: &DVector<f64>, penalty: f64, w: &mut DVector<f64>, tol: f64) -> Result<usize> {
    lasso_cd(g, c, penalty, w, tol, LASSO_MAX_SWEEPS)
}

fn lasso_cd(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    penalty: f64,
    w: &mut DVector<f64>,
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let k = c.len();
    let mut gw = g * &*w;
    for sweep in 1..=max_sweeps {
        let mut max_delta = 0.0f64;
        for j in 0..k {
            let gjj = g[(j, j)];
            let old = w[j];
            let new = if gjj > 0.0 { soft(c[j] - gw[j] + gjj * old, penalty) / gjj } else { 0.0 };
            let delta = new - old;
            if delta != 0.0 {
                w[j] = new;
                gw.axpy(delta, &g.column(j), 1.0);
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return Ok(sweep);
        }
    }
    Err(Error::NonConvergence { what: "lasso coordinate descent", iterations: max_sweeps })
}

/// Least squares in Gram form under `‖w‖₁ ≤ radius`. Solved as the penalized
/// problem whose multiplier is found by bisection (‖w(λ)‖₁ is non-increasing in λ).
pub fn lasso_gram_ball(g: &DMatrix<f64>, c: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    let k = c.len();
    let mut w = DVector::zeros(k);
    if radius <= 0.0 || k == 0 {
        return Ok(w);
    }
    // the unconstrained fit may be ill-posed (more predictors than rows); only
    // accept it when it settles quickly
    if lasso_cd(g, c, 0.0, &mut w, LASSO_TOL, 1_000).is_ok() && w.lp_norm(1) <= radius {
        return Ok(w);
    }
    let mut lo = 0.0;
    let mut hi = c.amax();
    let mut best = DVector::zeros(k);
    let mut wa = DVector::zeros(k);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        lasso_gram(g, c, mid, &mut wa)?;
        let norm = wa.lp_norm(1);
        if norm > radius {
            lo = mid;
        } else {
            hi = mid;
            best.copy_from(&wa);
            if radius - norm <= 1e-9 * radius {
                break;
            }
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(best)
}

pub fn lasso_solve(prob: &LassoProblem) -> Result<DVector<f64>> {
    let (t, k) = prob.design.shape();
    if prob.response.len() != t {
        return Err(Error::DimensionMismatch { expected: t, found: prob.response.len() });
    }
    if prob.penalty < 0.0 {
        return Err(Error::InvalidInput("lasso penalty must be non-negative".into()));
    }
    let tf = t as f64;
    let g = prob.design.tr_mul(&prob.design) / tf;
    let c = prob.design.tr_mul(&prob.response) / tf;
    match prob.l1_ball_radius {
        Some(r) if r > 0.0 => lasso_gram_ball(&g, &c, r),
        Some(r) => Err(Error::InvalidInput(format!("l1 ball radius must be positive, got {r}"))),
        None => {
            let mut w = DVector::zeros(k);
            lasso_gram(&g, &c, prob.penalty, &mut w)?;
            Ok(w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(t: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, k, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_fn(k, |j, _| if j % 2 == 0 { 1.0 } else { -0.5 });
        let noise = DVector::from_fn(t, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.3 * z
        });
        let y = &x * beta + noise;
        (x, y)
    }

    #[test]
    fn zero_penalty_is_ols() {
        let (x, y) = problem(200, 5, 1);
        let w = lasso_solve(&LassoProblem { design: x.clone(), response: y.clone(), penalty: 0.0, l1_ball_radius: None })
            .unwrap();
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        assert!((w - ols).amax() < 1e-6);
    }

    #[test]
    fn large_penalty_gives_zero() {
        let (x, y) = problem(100, 6, 2);
        let lmax = (x.tr_mul(&y) / 100.0).amax();
        let w = lasso_solve(&LassoProblem { design: x, response: y, penalty: lmax, l1_ball_radius: None }).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, -1.0, 0.5]);
        let y = DVector::from_vec(vec![2.0, 3.5, -1.5, 1.0]);
        let g = x.norm_squared() / 4.0;
        let c = (x.transpose() * &y)[0] / 4.0;
        for pen in [0.0, 0.1, 0.5, 5.0] {
            let expect = soft(c, pen) / g;
            let w = lasso_solve(&LassoProblem { design: x.clone(), response: y.clone(), penalty: pen, l1_ball_radius: None })
                .unwrap();
            assert!((w[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_constraint_is_active_and_optimal() {
        let (x, y) = problem(150, 4, 3);
        let radius = 0.8;
        let w = lasso_solve(&LassoProblem { design: x.clone(), response: y.clone(), penalty: 0.0, l1_ball_radius: Some(radius) })
            .unwrap();
        assert!((w.lp_norm(1) - radius).abs() < 1e-6);
        let loss = |v: &DVector<f64>| (&y - &x * v).norm_squared();
        let base = loss(&w);
        // brute-force check over random points on the ball surface
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let v = DVector::from_fn(4, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let v = &v * (radius / v.lp_norm(1));
            assert!(loss(&v) >= base - 1e-8);
        }
    }

    #[test]
    fn loose_ball_is_ols() {
        let (x, y) = problem(150, 3, 4);
        let w = lasso_solve(&LassoProblem { design: x.clone(), response: y.clone(), penalty: 0.0, l1_ball_radius: Some(100.0) })
            .unwrap();
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        assert!((w - ols).amax() < 1e-6);
    }
}
