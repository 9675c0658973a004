//! Covariance estimators: sample covariance, linear and nonlinear shrinkage,
//! thresholding, and rotationally invariant eigenvalue cleaning.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{center_columns, correlation_from_cov, min_eigenvalue, scatter, spectral_decompose, symmetrize};
use crate::tuning::kfold_split;
use crate::types::{CovarianceEstimate, ReturnsMatrix};

/// Estimator identifiers accepted by the front-ends.
pub const COV_METHODS: [&str; 10] = ["sample", "lwl", "rblw", "oas", "bdl", "lwnl", "hard", "soft", "adaptive", "rie"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Identity,
    ScaledIdentity,
    UserMatrix,
}

#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    pub estimate: CovarianceEstimate,
    /// Weight on the target, in [0, 1].
    pub intensity: f64,
    pub target_kind: TargetKind,
    /// False when an iterative intensity hit its cap before settling.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CleanedSpectrum {
    pub raw_eigenvalues: DVector<f64>,
    pub cleaned_eigenvalues: DVector<f64>,
    pub q: f64,
}

pub fn sample_covariance(r: &ReturnsMatrix) -> CovarianceEstimate {
    CovarianceEstimate::new(scatter(r.values()), "sample")
}

fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// `(1-w) S + w (tr S / p) I`.
fn shrink_to_scaled_identity(s: &DMatrix<f64>, w: f64) -> DMatrix<f64> {
    let p = s.nrows();
    let mu = trace(s) / p as f64;
    let mut out = s * (1.0 - w);
    for i in 0..p {
        out[(i, i)] += w * mu;
    }
    out
}

fn linear_result(s: &DMatrix<f64>, w: f64, method: &str, converged: bool) -> ShrinkageResult {
    let w = w.clamp(0.0, 1.0);
    ShrinkageResult {
        estimate: CovarianceEstimate::new(shrink_to_scaled_identity(s, w), method).with_intensity(w),
        intensity: w,
        target_kind: TargetKind::ScaledIdentity,
        converged,
    }
}

/// Linear shrinkage toward `(tr S/p) I` with the 2004 Ledoit–Wolf intensity.
pub fn shrink_lw_linear(r: &ReturnsMatrix) -> ShrinkageResult {
    let xc = center_columns(r.values());
    let (t, p) = xc.shape();
    let s = symmetrize(&(xc.tr_mul(&xc) / t as f64));
    let mu = trace(&s) / p as f64;
    let mut dev = s.clone();
    for i in 0..p {
        dev[(i, i)] -= mu;
    }
    let d2 = dev.norm_squared() / p as f64;
    if d2 <= 0.0 {
        return linear_result(&s, 1.0, "lwl", true);
    }
    let fourth: f64 = xc.row_iter().map(|row| row.norm_squared().powi(2)).sum::<f64>() / t as f64;
    let b_bar2 = ((fourth - s.norm_squared()) / (t as f64 * p as f64)).max(0.0);
    let b2 = b_bar2.min(d2);
    linear_result(&s, b2 / d2, "lwl", true)
}

/// Rao–Blackwellized Ledoit–Wolf intensity.
pub fn shrink_rblw(r: &ReturnsMatrix) -> ShrinkageResult {
    let s = scatter(r.values());
    let n = r.n_periods() as f64;
    let p = r.n_assets() as f64;
    let tr2 = trace(&s).powi(2);
    let trs2 = s.norm_squared();
    let den = (n + 2.0) * (trs2 - tr2 / p);
    let rho = if den > 0.0 { (((n - 2.0) / n) * trs2 + tr2) / den } else { 1.0 };
    linear_result(&s, rho.min(1.0), "rblw", true)
}

pub const OAS_TOL: f64 = 1e-10;
pub const OAS_MAX_ITER: usize = 100;

/// One step of the oracle-approximating recursion evaluated at `ρ`.
pub fn oas_step(s: &DMatrix<f64>, n: f64, rho: f64) -> f64 {
    let p = s.nrows() as f64;
    let sig = shrink_to_scaled_identity(s, rho);
    let tr_sig_s = sig.component_mul(s).sum();
    let tr_sig = trace(&sig);
    let tr_sig2 = sig.norm_squared();
    let num = (1.0 - 2.0 / p) * tr_sig_s + tr_sig * tr_sig;
    let den = (n + 1.0 - 2.0 / p) * tr_sig_s + (1.0 - n / p) * tr_sig2;
    if den.abs() < f64::MIN_POSITIVE {
        1.0
    } else {
        num / den
    }
}

/// Iterates [`oas_step`] from `ρ = 0`. Returns the trajectory.
pub fn oas_trajectory(s: &DMatrix<f64>, n: f64) -> (Vec<f64>, bool) {
    let mut path = vec![0.0];
    let mut rho = 0.0;
    for _ in 0..OAS_MAX_ITER {
        let next = oas_step(s, n, rho);
        path.push(next);
        if (next - rho).abs() < OAS_TOL {
            return (path, true);
        }
        rho = next;
    }
    (path, false)
}

/// Oracle-approximating shrinkage by fixed-point iteration.
pub fn shrink_oas(r: &ReturnsMatrix) -> ShrinkageResult {
    let s = scatter(r.values());
    let p = s.nrows() as f64;
    let mu = trace(&s) / p;
    let mut dev = s.clone();
    for i in 0..s.nrows() {
        dev[(i, i)] -= mu;
    }
    if dev.norm_squared() <= 1e-30 * s.norm_squared().max(f64::MIN_POSITIVE) {
        return linear_result(&s, 1.0, "oas", true);
    }
    let (path, converged) = oas_trajectory(&s, r.n_periods() as f64);
    if !converged {
        log::warn!("oas: intensity iteration did not settle within {OAS_MAX_ITER} steps");
    }
    linear_result(&s, *path.last().unwrap(), "oas", converged)
}

/// Bodnar–Gupta–Parolya linear shrinkage `α̂ S + β̂ Σ₀`. The reported
/// intensity is `1 − α̂`.
pub fn shrink_bodnar(r: &ReturnsMatrix, target: &DMatrix<f64>) -> Result<ShrinkageResult> {
    let s = scatter(r.values());
    let p = s.nrows();
    if target.shape() != (p, p) {
        return Err(Error::DimensionMismatch { expected: p, found: target.nrows() });
    }
    let target = symmetrize(target);
    if Cholesky::new(target.clone()).is_none() {
        return Err(Error::DegenerateTarget);
    }
    let pf = p as f64;
    let c = pf / r.n_periods() as f64;
    let m = trace(&s) / pf;
    let s_t = s.component_mul(&target).sum() / pf;
    let t2 = target.norm_squared() / pf;
    let s2 = s.norm_squared() / pf;
    let den = s2 - s_t * s_t / t2;
    let alpha = if den > 1e-14 * s2 { (1.0 - c * m * m / den).clamp(0.0, 1.0) } else { 0.0 };
    let beta = s_t * (1.0 - alpha) / t2;
    let matrix = &s * alpha + &target * beta;
    let is_identity = target == DMatrix::identity(p, p);
    Ok(ShrinkageResult {
        estimate: CovarianceEstimate::new(matrix, "bdl").with_intensity(1.0 - alpha),
        intensity: 1.0 - alpha,
        target_kind: if is_identity { TargetKind::Identity } else { TargetKind::UserMatrix },
        converged: true,
    })
}

/// Coefficient `β̂` paired with the intensity, for reporting.
pub fn bodnar_coefficients(est: &ShrinkageResult, r: &ReturnsMatrix, target: &DMatrix<f64>) -> (f64, f64) {
    let s = scatter(r.values());
    let p = s.nrows() as f64;
    let alpha = 1.0 - est.intensity;
    let beta = s.component_mul(target).sum() / p * (1.0 - alpha) / (target.norm_squared() / p);
    (alpha, beta)
}

/// Analytical nonlinear shrinkage (kernel density of the sample spectrum and its
/// Hilbert transform, Epanechnikov kernel, bandwidth `n^(-1/3)`). Works on the
/// demeaned scatter with `n = T − 1`.
pub fn shrink_lw_nonlinear(r: &ReturnsMatrix) -> Result<CovarianceEstimate> {
    let t = r.n_periods();
    if t < 12 {
        return Err(Error::TooFewRows { required: 12, rows: t });
    }
    let n = t - 1;
    let p = r.n_assets();
    let xc = center_columns(r.values());
    let s = symmetrize(&(xc.tr_mul(&xc) / n as f64));
    let spec = spectral_decompose(&s)?;
    let scale = spec.max().abs().max(f64::MIN_POSITIVE);
    if spec.max() - spec.min() <= 1e-12 * scale {
        return Ok(CovarianceEstimate::new(scatter(r.values()), "lwnl"));
    }
    let m = p.min(n);
    // top m eigenvalues; the remaining p − m are structural zeros when p > n
    let lambda: Vec<f64> = spec.values.iter().take(m).map(|&v| v.max(f64::MIN_POSITIVE)).collect();
    let h = (n as f64).powf(-1.0 / 3.0);
    let sqrt5 = 5f64.sqrt();
    let (ftilde, hftilde): (Vec<f64>, Vec<f64>) = lambda
        .iter()
        .map(|&li| {
            let mut f = 0.0;
            let mut hf = 0.0;
            for &lj in &lambda {
                let hh = h * lj;
                let x = (li - lj) / hh;
                f += (1.0 - x * x / 5.0).max(0.0) / hh;
                let mut term = -3.0 / (10.0 * PI) * x;
                if (x.abs() - sqrt5).abs() > 1e-300 {
                    term += 3.0 / (4.0 * sqrt5 * PI) * (1.0 - x * x / 5.0) * ((sqrt5 - x) / (sqrt5 + x)).abs().ln();
                }
                hf += term / hh;
            }
            (3.0 / (4.0 * sqrt5) * f / m as f64, hf / m as f64)
        })
        .unzip();
    let c = p as f64 / n as f64;
    let mut d = DVector::zeros(p);
    if p <= n {
        for i in 0..m {
            let l = lambda[i];
            let a = PI * c * l * ftilde[i];
            let b = 1.0 - c - PI * c * l * hftilde[i];
            d[i] = l / (a * a + b * b);
        }
    } else {
        if sqrt5 * h >= 1.0 {
            return Err(Error::TooFewRows { required: 13, rows: t });
        }
        let inv_mean = lambda.iter().map(|l| 1.0 / l).sum::<f64>() / m as f64;
        let hf0 = (1.0 / PI)
            * (3.0 / (10.0 * h * h)
                + 3.0 / (4.0 * sqrt5 * h) * (1.0 - 1.0 / (5.0 * h * h)) * ((1.0 + sqrt5 * h) / (1.0 - sqrt5 * h)).ln())
            * inv_mean;
        let d0 = 1.0 / (PI * (p - n) as f64 / n as f64 * hf0);
        for i in 0..m {
            let l = lambda[i];
            d[i] = l / (PI * PI * l * l * (ftilde[i].powi(2) + hftilde[i].powi(2)));
        }
        for i in m..p {
            d[i] = d0;
        }
    }
    if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Degenerate("nonlinear shrinkage produced a non-positive eigenvalue".into()));
    }
    Ok(CovarianceEstimate::new(spec.rebuild_with(&d), "lwnl"))
}

/// Kind of entry-wise thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    Hard,
    Soft,
    Adaptive,
}

impl ThresholdRule {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdRule::Hard => "hard",
            ThresholdRule::Soft => "soft",
            ThresholdRule::Adaptive => "adaptive",
        }
    }
}

fn map_offdiag(s: &DMatrix<f64>, mut f: impl FnMut(usize, usize, f64) -> f64) -> DMatrix<f64> {
    let p = s.nrows();
    let mut out = s.clone();
    for j in 0..p {
        for i in 0..p {
            if i != j {
                out[(i, j)] = f(i, j, s[(i, j)]);
            }
        }
    }
    out
}

fn with_min_eig(mut est: CovarianceEstimate) -> CovarianceEstimate {
    est.min_eigenvalue = min_eigenvalue(&est.matrix).ok();
    est
}

pub fn soft(z: f64, tau: f64) -> f64 {
    z.signum() * (z.abs() - tau).max(0.0)
}

/// Zeroes off-diagonal entries with `|s_ij| ≤ τ`.
pub fn threshold_hard(s: &CovarianceEstimate, tau: f64) -> CovarianceEstimate {
    let m = map_offdiag(&s.matrix, |_, _, z| if z.abs() <= tau { 0.0 } else { z });
    with_min_eig(CovarianceEstimate::new(m, "hard").with_threshold(tau))
}

/// Applies `sgn(z)(|z| − τ)₊` to off-diagonal entries.
pub fn threshold_soft(s: &CovarianceEstimate, tau: f64) -> CovarianceEstimate {
    let m = map_offdiag(&s.matrix, |_, _, z| soft(z, tau));
    with_min_eig(CovarianceEstimate::new(m, "soft").with_threshold(tau))
}

/// Entry-wise noise levels `θ̂_ij`: the variance of the products of centered returns.
pub fn product_variances(r: &ReturnsMatrix, s: &DMatrix<f64>) -> DMatrix<f64> {
    let xc = center_columns(r.values());
    let (t, p) = xc.shape();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let mut acc = 0.0;
            for k in 0..t {
                let d = xc[(k, i)] * xc[(k, j)] - s[(i, j)];
                acc += d * d;
            }
            theta[(i, j)] = acc / t as f64;
            theta[(j, i)] = theta[(i, j)];
        }
    }
    theta
}

pub const ADAPTIVE_DELTA: f64 = 2.0;

/// Soft thresholding with entry-adaptive levels `λ_ij = δ √(θ̂_ij log p / T)`.
pub fn threshold_adaptive(s: &CovarianceEstimate, r: &ReturnsMatrix, delta: f64) -> CovarianceEstimate {
    let theta = product_variances(r, &s.matrix);
    let scale = (r.n_assets() as f64).ln() / r.n_periods() as f64;
    let m = map_offdiag(&s.matrix, |i, j, z| soft(z, delta * (theta[(i, j)] * scale).sqrt()));
    with_min_eig(CovarianceEstimate::new(m, "adaptive").with_threshold(delta))
}

fn apply_rule(rule: ThresholdRule, train: &ReturnsMatrix, level: f64) -> CovarianceEstimate {
    let s = sample_covariance(train);
    match rule {
        ThresholdRule::Hard => threshold_hard(&s, level),
        ThresholdRule::Soft => threshold_soft(&s, level),
        ThresholdRule::Adaptive => threshold_adaptive(&s, train, level),
    }
}

/// Default search grid: 20 thresholds from 0 to the largest off-diagonal
/// magnitude, or 9 multipliers δ ∈ {0, 0.5, …, 4} for the adaptive rule.
pub fn default_threshold_grid(rule: ThresholdRule, r: &ReturnsMatrix) -> Vec<f64> {
    match rule {
        ThresholdRule::Adaptive => (0..9).map(|k| 0.5 * k as f64).collect(),
        _ => {
            let s = scatter(r.values());
            let p = s.nrows();
            let mut top = 0.0f64;
            for j in 0..p {
                for i in 0..j {
                    top = top.max(s[(i, j)].abs());
                }
            }
            (0..20).map(|k| top * k as f64 / 19.0).collect()
        }
    }
}

/// Mean over `k` contiguous folds of `‖threshold(train) − S_holdout‖_F`.
pub fn threshold_cv_score(rule: ThresholdRule, r: &ReturnsMatrix, level: f64, k: usize) -> Result<f64> {
    let plan = kfold_split(r.n_periods(), k)?;
    let mut total = 0.0;
    for f in 0..plan.k() {
        let (train, hold) = plan.split(r, f)?;
        let est = apply_rule(rule, &train, level);
        total += (&est.matrix - scatter(hold.values())).norm();
    }
    Ok(total / plan.k() as f64)
}

/// Picks the threshold by 5-fold CV and refits on the full panel. Ties favour
/// the larger threshold.
pub fn tune_threshold(rule: ThresholdRule, r: &ReturnsMatrix, grid: &[f64]) -> Result<(CovarianceEstimate, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty threshold grid".into()));
    }
    let scores: Vec<Result<f64>> = grid.par_iter().map(|&g| threshold_cv_score(rule, r, g, 5)).collect();
    let mut best: Option<(f64, f64)> = None;
    for (&g, sc) in grid.iter().zip(scores) {
        let sc = sc?;
        best = match best {
            Some((bg, bs)) if sc > bs || (sc == bs && g <= bg) => Some((bg, bs)),
            _ => Some((g, sc)),
        };
    }
    let (level, _) = best.unwrap();
    Ok((apply_rule(rule, r, level), level))
}

/// Rotationally invariant cleaning of the sample correlation matrix.
pub fn rie_clean(r: &ReturnsMatrix) -> Result<(CovarianceEstimate, CleanedSpectrum)> {
    let t = r.n_periods();
    if t <= 2 {
        return Err(Error::TooFewRows { required: 3, rows: t });
    }
    let s = scatter(r.values());
    let (corr, sd) = correlation_from_cov(&s);
    let spec = spectral_decompose(&corr)?;
    let p = corr.nrows();
    if spec.max() - spec.min() <= 1e-12 * spec.max().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateSpectrum);
    }
    let q = p as f64 / t as f64;
    let eta = (t as f64).powf(-0.5);
    let lam: Vec<f64> = spec.values.iter().copied().collect();
    let mut xi: Vec<f64> = lam
        .iter()
        .map(|&lk| {
            // g(z) = (1/p) Σ 1/(z − λ_j) with z = λ_k + iη
            let (mut gr, mut gi) = (0.0, 0.0);
            for &lj in &lam {
                let a = lk - lj;
                let den = a * a + eta * eta;
                gr += a / den;
                gi -= eta / den;
            }
            gr /= p as f64;
            gi /= p as f64;
            let re = 1.0 - q + q * lk * gr;
            let im = q * lk * gi;
            (lk / (re * re + im * im)).max(0.0)
        })
        .collect();
    let total: f64 = xi.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    for v in &mut xi {
        *v *= p as f64 / total;
    }
    let cleaned = DVector::from_vec(xi);
    let corr_clean = spec.rebuild_with(&cleaned);
    let mut cov = corr_clean;
    for j in 0..p {
        for i in 0..p {
            cov[(i, j)] *= sd[i] * sd[j];
        }
    }
    Ok((
        CovarianceEstimate::new(cov, "rie"),
        CleanedSpectrum { raw_eigenvalues: spec.values, cleaned_eigenvalues: cleaned, q },
    ))
}

/// Covariance estimator selected by identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovMethod {
    Sample,
    Lwl,
    Rblw,
    Oas,
    Bdl,
    Lwnl,
    Hard,
    Soft,
    Adaptive,
    Rie,
}

impl CovMethod {
    pub fn name(self) -> &'static str {
        match self {
            CovMethod::Sample => "sample",
            CovMethod::Lwl => "lwl",
            CovMethod::Rblw => "rblw",
            CovMethod::Oas => "oas",
            CovMethod::Bdl => "bdl",
            CovMethod::Lwnl => "lwnl",
            CovMethod::Hard => "hard",
            CovMethod::Soft => "soft",
            CovMethod::Adaptive => "adaptive",
            CovMethod::Rie => "rie",
        }
    }

    /// Fits on `r`. Thresholding rules pick their level by 5-fold CV; the
    /// remaining estimators have closed-form intensities.
    pub fn estimate(self, r: &ReturnsMatrix) -> Result<CovarianceEstimate> {
        Ok(match self {
            CovMethod::Sample => sample_covariance(r),
            CovMethod::Lwl => shrink_lw_linear(r).estimate,
            CovMethod::Rblw => shrink_rblw(r).estimate,
            CovMethod::Oas => shrink_oas(r).estimate,
            CovMethod::Bdl => shrink_bodnar(r, &DMatrix::identity(r.n_assets(), r.n_assets()))?.estimate,
            CovMethod::Lwnl => shrink_lw_nonlinear(r)?,
            CovMethod::Hard | CovMethod::Soft | CovMethod::Adaptive => {
                let rule = match self {
                    CovMethod::Hard => ThresholdRule::Hard,
                    CovMethod::Soft => ThresholdRule::Soft,
                    _ => ThresholdRule::Adaptive,
                };
                tune_threshold(rule, r, &default_threshold_grid(rule, r))?.0
            }
            CovMethod::Rie => rie_clean(r)?.0,
        })
    }
}

impl std::str::FromStr for CovMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sample" => CovMethod::Sample,
            "lwl" => CovMethod::Lwl,
            "rblw" => CovMethod::Rblw,
            "oas" => CovMethod::Oas,
            "bdl" => CovMethod::Bdl,
            "lwnl" => CovMethod::Lwnl,
            "hard" => CovMethod::Hard,
            "soft" => CovMethod::Soft,
            "adaptive" => CovMethod::Adaptive,
            "rie" => CovMethod::Rie,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown covariance method '{other}'; valid: {}",
                    COV_METHODS.join(", ")
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(t: usize, p: usize, seed: u64) -> ReturnsMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_fn(t, p, |_, _| StandardNormal.sample(&mut rng));
        ReturnsMatrix::from_values(v).unwrap()
    }

    fn panel(rows: &[&[f64]]) -> ReturnsMatrix {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ReturnsMatrix::from_values(DMatrix::from_row_slice(rows.len(), p, &flat)).unwrap()
    }

    fn two_pass(r: &ReturnsMatrix) -> DMatrix<f64> {
        let x = r.values();
        let (t, p) = x.shape();
        let mut mean = vec![0.0; p];
        for j in 0..p {
            for i in 0..t {
                mean[j] += x[(i, j)];
            }
            mean[j] /= t as f64;
        }
        DMatrix::from_fn(p, p, |a, b| {
            let mut acc = 0.0;
            for i in 0..t {
                acc += (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
            acc / t as f64
        })
    }

    /// Square-and-circle design: S is exactly proportional to I.
    fn isotropic() -> ReturnsMatrix {
        panel(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]])
    }

    #[test]
    fn sample_hand_values() {
        let s = sample_covariance(&panel(&[&[0.0, 0.0], &[2.0, 2.0]]));
        assert_eq!(s.matrix, DMatrix::from_element(2, 2, 1.0));
        let s = sample_covariance(&panel(&[&[1.0, 3.0], &[2.0, 3.0], &[5.0, 3.0]]));
        assert_eq!(s.matrix[(1, 1)], 0.0);
        assert_eq!(s.matrix[(0, 1)], 0.0);
    }

    #[test]
    fn sample_matches_two_pass() {
        let r = gaussian(50, 3, 7);
        let s = sample_covariance(&r);
        assert!((&s.matrix - two_pass(&r)).amax() < 1e-12);
    }

    #[test]
    fn endpoint_coincidence_returns_s() {
        let r = isotropic();
        let s = sample_covariance(&r).matrix;
        for res in [shrink_lw_linear(&r), shrink_rblw(&r), shrink_oas(&r)] {
            assert!((&res.estimate.matrix - &s).amax() < 1e-15, "{}", res.estimate.method);
        }
    }

    #[test]
    fn bdl_identity_alignment() {
        let r = isotropic();
        let res = shrink_bodnar(&r, &DMatrix::identity(2, 2)).unwrap();
        let m = &res.estimate.matrix;
        assert!(m[(0, 1)].abs() < 1e-15);
        assert!((m[(0, 0)] - m[(1, 1)]).abs() < 1e-15);
        assert_eq!(res.target_kind, TargetKind::Identity);
    }

    #[test]
    fn bdl_rejects_indefinite_target() {
        let r = gaussian(20, 3, 1);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(matches!(shrink_bodnar(&r, &bad), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn lwl_intensity_vanishes_with_long_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scales = [1.0, 2.0, 0.5, 3.0];
        let v = DMatrix::from_fn(20_000, 4, |_, j| scales[j] * { let z: f64 = StandardNormal.sample(&mut rng); z });
        let r = ReturnsMatrix::from_values(v).unwrap();
        assert!(shrink_lw_linear(&r).intensity < 0.01);
    }

    #[test]
    fn oas_fixed_point_is_self_consistent() {
        for seed in 0..20 {
            let r = gaussian(15, 8, seed);
            let s = scatter(r.values());
            let (path, converged) = oas_trajectory(&s, 15.0);
            assert!(converged);
            let rho = *path.last().unwrap();
            assert!((oas_step(&s, 15.0, rho) - rho).abs() < 1e-8);
        }
    }

    #[test]
    fn oas_iteration_is_monotone() {
        for seed in 0..50 {
            let r = gaussian(10 + (seed as usize % 30), 2 + (seed as usize % 12), seed);
            let s = scatter(r.values());
            let (path, _) = oas_trajectory(&s, r.n_periods() as f64);
            let up = path.windows(2).all(|w| w[1] >= w[0] - 1e-15);
            let down = path.windows(2).all(|w| w[1] <= w[0] + 1e-15);
            assert!(up || down, "seed {seed}: {path:?}");
        }
    }

    #[test]
    fn lwnl_isotropic_fixed_point() {
        let mut rows = Vec::new();
        for k in 0..8 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            rows.push(vec![s, 0.0]);
            rows.push(vec![0.0, s]);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let r = panel(&refs);
        let out = shrink_lw_nonlinear(&r).unwrap();
        let s = sample_covariance(&r).matrix;
        assert!((&out.matrix - &s).amax() < 1e-15);
    }

    #[test]
    fn lwnl_keeps_eigenbasis() {
        for (t, p) in [(60, 10), (20, 30)] {
            let r = gaussian(t, p, 11);
            let out = shrink_lw_nonlinear(&r).unwrap();
            let vin = spectral_decompose(&scatter(r.values())).unwrap().vectors;
            // Vᵀ Σ̂ V must be diagonal in the sample basis
            let rot = vin.transpose() * &out.matrix * &vin;
            let off = rot.clone() - DMatrix::from_diagonal(&rot.diagonal());
            assert!(off.amax() < 1e-8 * rot.amax());
            assert!(min_eigenvalue(&out.matrix).unwrap() > 0.0);
        }
    }

    #[test]
    fn lwnl_needs_twelve_rows() {
        assert!(matches!(shrink_lw_nonlinear(&gaussian(11, 3, 0)), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn hard_threshold_cases() {
        let s = CovarianceEstimate::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]), "sample");
        assert_eq!(threshold_hard(&s, 0.2).matrix, DMatrix::identity(2, 2));
        assert_eq!(threshold_hard(&s, 0.0).matrix, s.matrix);
        let r = gaussian(30, 5, 2);
        let s = sample_covariance(&r);
        let top = s.matrix.iter().copied().fold(0.0f64, |a, b| a.max(b.abs()));
        let d = threshold_hard(&s, top).matrix;
        assert_eq!(d, DMatrix::from_diagonal(&s.matrix.diagonal()));
    }

    #[test]
    fn soft_threshold_cases() {
        assert!((soft(0.5, 0.3) - 0.2).abs() < 1e-15);
        assert!((soft(-0.5, 0.3) + 0.2).abs() < 1e-15);
        let r = gaussian(30, 5, 4);
        let s = sample_covariance(&r);
        assert_eq!(threshold_soft(&s, 0.0).matrix, s.matrix);
        let tau = 0.1;
        let h = threshold_hard(&s, tau).matrix;
        let so = threshold_soft(&s, tau).matrix;
        assert!(so.iter().zip(h.iter()).all(|(a, b)| a.abs() <= b.abs()));
    }

    #[test]
    fn hard_is_idempotent_and_soft_composes() {
        let r = gaussian(30, 6, 5);
        let s = sample_covariance(&r);
        let once = threshold_hard(&s, 0.15);
        assert_eq!(threshold_hard(&once, 0.15).matrix, once.matrix);
        let twice = threshold_soft(&threshold_soft(&s, 0.05), 0.05).matrix;
        assert!((twice - threshold_soft(&s, 0.1).matrix).amax() < 1e-15);
    }

    #[test]
    fn adaptive_limits() {
        let r = gaussian(40, 5, 6);
        let s = sample_covariance(&r);
        assert_eq!(threshold_adaptive(&s, &r, 0.0).matrix, s.matrix);
        let d = threshold_adaptive(&s, &r, 1e6).matrix;
        assert_eq!(d, DMatrix::from_diagonal(&s.matrix.diagonal()));
    }

    #[test]
    fn threshold_cv_returns_grid_point() {
        let r = gaussian(60, 6, 8);
        let grid = default_threshold_grid(ThresholdRule::Hard, &r);
        let (est, tau) = tune_threshold(ThresholdRule::Hard, &r, &grid).unwrap();
        assert!(grid.contains(&tau));
        assert_eq!(est.threshold, Some(tau));
        assert!(est.min_eigenvalue.is_some());
    }

    #[test]
    fn rie_trace_and_basis() {
        let r = gaussian(80, 12, 9);
        let (est, spec) = rie_clean(&r).unwrap();
        assert!((spec.cleaned_eigenvalues.sum() - 12.0).abs() < 1e-8);
        assert!(spec.cleaned_eigenvalues.iter().all(|&v| v >= 0.0));
        let (corr, sd) = correlation_from_cov(&scatter(r.values()));
        let v = spectral_decompose(&corr).unwrap().vectors;
        let clean_corr = DMatrix::from_fn(12, 12, |i, j| est.matrix[(i, j)] / (sd[i] * sd[j]));
        assert!((clean_corr.trace() - 12.0).abs() < 1e-8);
        let rot = v.transpose() * clean_corr * &v;
        let off = rot.clone() - DMatrix::from_diagonal(&rot.diagonal());
        assert!(off.amax() < 1e-8);
    }

    #[test]
    fn rie_independent_pair_is_nearly_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = DMatrix::from_fn(10_000, 2, |_, j| (1.0 + j as f64) * { let z: f64 = StandardNormal.sample(&mut rng); z });
        let r = ReturnsMatrix::from_values(v).unwrap();
        let (est, _) = rie_clean(&r).unwrap();
        let s = sample_covariance(&r).matrix;
        assert!(est.matrix[(0, 1)].abs() / (s[(0, 0)] * s[(1, 1)]).sqrt() < 0.02);
    }

    #[test]
    fn method_names_round_trip() {
        for name in COV_METHODS {
            let m: CovMethod = name.parse().unwrap();
            assert_eq!(m.name(), name);
        }
        let err = "nope".parse::<CovMethod>().unwrap_err();
        assert!(err.to_string().contains("lwnl"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn intensities_in_unit_interval(seed in 0u64..10_000, t in 3usize..40, p in 2usize..15) {
            let r = gaussian(t, p, seed);
            for res in [shrink_lw_linear(&r), shrink_rblw(&r), shrink_oas(&r),
                        shrink_bodnar(&r, &DMatrix::identity(p, p)).unwrap()] {
                proptest::prop_assert!((0.0..=1.0).contains(&res.intensity));
            }
        }

        #[test]
        fn shrinkage_is_convex(seed in 0u64..10_000, t in 3usize..40, p in 2usize..12) {
            let r = gaussian(t, p, seed);
            let s = scatter(r.values());
            let floor = min_eigenvalue(&s).unwrap().min(s.diagonal().sum() / p as f64);
            for res in [shrink_lw_linear(&r), shrink_rblw(&r), shrink_oas(&r)] {
                let e = min_eigenvalue(&res.estimate.matrix).unwrap();
                proptest::prop_assert!(e >= floor - 1e-10);
            }
        }

        #[test]
        fn soft_never_grows_offdiagonals(seed in 0u64..10_000, tau in 0.0f64..1.0) {
            let r = gaussian(20, 5, seed);
            let s = sample_covariance(&r);
            let out = threshold_soft(&s, tau);
            proptest::prop_assert!(out.matrix.iter().zip(s.matrix.iter()).all(|(a, b)| a.abs() <= b.abs()));
        }
    }
}
