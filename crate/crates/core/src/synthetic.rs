//! Ground-truth Gaussian graphical models and the two synthetic experiments:
//! sample complexity of structure recovery, and Frobenius error of Θ̂.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cov::CovMethod;
use crate::error::{Error, Result};
use crate::ggm::GgmMethod;
use crate::linalg::{clip_spectrum, frobenius, min_eigenvalue, solve_spd, symmetrize};
use crate::portfolio::REPAIR_FLOOR;
use crate::tuning::{tune_estimator, TuneConfig};
use crate::types::ReturnsMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GgmGroundTruth {
    pub theta: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Pairs `(i, j)` with `i < j` and `Θ_ij ≠ 0`.
    pub edges: BTreeSet<(usize, usize)>,
    /// Smallest `|Θ_ij| / √(Θ_ii Θ_jj)` over the edges (∞ with no edges).
    pub kappa: f64,
}

fn normalized(theta: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let d = (theta[(i, i)] * theta[(j, j)]).abs().sqrt();
    if d > 0.0 {
        theta[(i, j)].abs() / d
    } else {
        0.0
    }
}

impl GgmGroundTruth {
    /// Builds the truth from a precision matrix and its inverse.
    pub fn from_parts(theta: DMatrix<f64>, sigma: DMatrix<f64>) -> Self {
        let p = theta.nrows();
        let mut edges = BTreeSet::new();
        let mut kappa = f64::INFINITY;
        for j in 0..p {
            for i in 0..j {
                if theta[(i, j)] != 0.0 {
                    edges.insert((i, j));
                    kappa = kappa.min(normalized(&theta, i, j));
                }
            }
        }
        Self { theta, sigma, edges, kappa }
    }

    pub fn from_sigma(sigma: DMatrix<f64>) -> Result<Self> {
        let p = sigma.nrows();
        let theta = symmetrize(&solve_spd(&sigma, &DMatrix::identity(p, p))?.solution);
        Ok(Self::from_parts(theta, sigma))
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }
}

/// First `n/2` coordinates: Brownian motion with an independent `N(0, ½)`
/// offset sampled at `i/n`, so `Cov = ½ + min(i, j)/n` (1-indexed) and Θ is
/// tridiagonal. Last `n/2`: independent `d`-cliques with
/// `Θ₀ = I − (ρ/d)11ᵀ`, rescaled to unit variances.
pub fn gen_brownian_clique_model(n: usize, d: usize, rho: f64) -> Result<GgmGroundTruth> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::BadDimensions(format!("n must be even and >= 2, got {n}")));
    }
    let half = n / 2;
    if d == 0 || half % d != 0 {
        return Err(Error::BadDimensions(format!("clique size {d} must divide n/2 = {half}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidInput(format!("rho must lie in (0, 1), got {rho}")));
    }
    let nf = n as f64;
    let mut theta = DMatrix::zeros(n, n);
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..half {
        for j in 0..half {
            sigma[(i, j)] = 0.5 + (i.min(j) + 1) as f64 / nf;
        }
    }
    // random walk: first state variance ½ + 1/n, increments of variance 1/n
    let step = 1.0 / nf;
    let first = 0.5 + step;
    if half == 1 {
        theta[(0, 0)] = 1.0 / first;
    } else {
        for i in 0..half {
            theta[(i, i)] = if i == 0 {
                1.0 / first + 1.0 / step
            } else if i == half - 1 {
                1.0 / step
            } else {
                2.0 / step
            };
            if i + 1 < half {
                theta[(i, i + 1)] = -1.0 / step;
                theta[(i + 1, i)] = -1.0 / step;
            }
        }
    }
    // clique: Σ₀ = I + a/(1 − ρ)·11ᵀ with a = ρ/d; unit-variance rescale by s₀
    let a = rho / d as f64;
    let s0 = 1.0 + a / (1.0 - rho);
    for b in 0..half / d {
        let base = half + b * d;
        for i in 0..d {
            for j in 0..d {
                let eye = if i == j { 1.0 } else { 0.0 };
                theta[(base + i, base + j)] = s0 * (eye - a);
                sigma[(base + i, base + j)] = (eye + a / (1.0 - rho)) / s0;
            }
        }
    }
    Ok(GgmGroundTruth::from_parts(theta, sigma))
}

pub const MARKET_VARIANCE: f64 = 0.25e-4;
pub const SECTOR_VARIANCE: f64 = 2e-4;
pub const DEFAULT_SECTOR_SIZE: usize = 5;

/// Market plus sector model at daily-return scale,
/// `Σ = σ_m²ββᵀ + σ_s² Σ_k γ_kγ_kᵀ + diag(ψ)`, with contiguous sectors of
/// `sector_size` assets (the last one may be shorter). Loadings are
/// `U(0.5, 1.5)`, idiosyncratic vols `U(1%, 3%)`.
pub fn factor_model_sigma(p: usize, sector_size: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = sector_size.max(1);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
    let gamma: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
    let idio: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..0.03)).collect();
    DMatrix::from_fn(p, p, |i, j| {
        let mut v = MARKET_VARIANCE * (beta[i] * beta[j]);
        if i / size == j / size {
            v += SECTOR_VARIANCE * (gamma[i] * gamma[j]);
        }
        if i == j {
            v += idio[i] * idio[i];
        }
        v
    })
}

/// `m` draws of `N(0, Σ)` as `Z Lᵀ` with `Σ = LLᵀ`.
pub fn sample_mvn_sigma(sigma: &DMatrix<f64>, m: usize, seed: u64) -> Result<ReturnsMatrix> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {m}")));
    }
    let l = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(m, sigma.nrows(), |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    ReturnsMatrix::from_values(z * l.transpose())
}

pub fn sample_mvn(truth: &GgmGroundTruth, m: usize, seed: u64) -> Result<ReturnsMatrix> {
    sample_mvn_sigma(&truth.sigma, m, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub incorrect_edges_per_node: f64,
    pub missed: BTreeSet<(usize, usize)>,
    pub spurious: BTreeSet<(usize, usize)>,
}

/// Predicted edges are the pairs with `|Θ̂_ij|/√(Θ̂_ii Θ̂_jj) > κ/2`, using the
/// truth's κ. Incorrect edges per node = (missed + spurious) / p.
pub fn edge_recovery_error(theta_hat: &DMatrix<f64>, truth: &GgmGroundTruth) -> Result<RecoveryReport> {
    let p = truth.dim();
    if theta_hat.shape() != (p, p) {
        return Err(Error::DimensionMismatch { expected: p, found: theta_hat.nrows() });
    }
    let cut = truth.kappa / 2.0;
    let mut missed = BTreeSet::new();
    let mut spurious = BTreeSet::new();
    for j in 0..p {
        for i in 0..j {
            let predicted = normalized(theta_hat, i, j) > cut;
            match (predicted, truth.edges.contains(&(i, j))) {
                (true, false) => {
                    spurious.insert((i, j));
                }
                (false, true) => {
                    missed.insert((i, j));
                }
                _ => {}
            }
        }
    }
    let incorrect_edges_per_node = (missed.len() + spurious.len()) as f64 / p as f64;
    Ok(RecoveryReport { incorrect_edges_per_node, missed, spurious })
}

/// Structure-recovery estimator: a tuned GGM method, or the truth itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryMethod {
    Oracle,
    Ggm(GgmMethod),
}

impl RecoveryMethod {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMethod::Oracle => "oracle",
            RecoveryMethod::Ggm(g) => g.name(),
        }
    }

    fn estimate(self, r: &ReturnsMatrix, truth: &GgmGroundTruth, tuning: &TuneConfig) -> Result<DMatrix<f64>> {
        match self {
            RecoveryMethod::Oracle => Ok(truth.theta.clone()),
            RecoveryMethod::Ggm(g) => Ok(tune_estimator(r, g, tuning)?.0.matrix),
        }
    }
}

impl std::str::FromStr for RecoveryMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(RecoveryMethod::Oracle);
        }
        s.parse().map(RecoveryMethod::Ggm)
    }
}

/// Mixes a base seed with experiment coordinates (SplitMix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityConfig {
    /// Largest tolerated incorrect edges per node.
    pub target: f64,
    pub trials: usize,
    /// First rung of the doubling ladder.
    pub ladder_start: usize,
    pub max_samples: usize,
    /// Bisection steps between the last failing and first passing rung.
    pub refine_steps: usize,
    pub seed: u64,
    pub tuning: TuneConfig,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            target: 0.25,
            trials: 5,
            ladder_start: 32,
            max_samples: 1 << 16,
            refine_steps: 4,
            seed: 0,
            tuning: TuneConfig::default(),
        }
    }
}

/// Number of trials (out of `cfg.trials`) at `m` samples whose tuned estimate
/// reaches the target. Failed fits count as misses. Trial data depend only
/// on `(seed, p, m, trial)`, so different methods see the same samples.
pub fn recovery_successes(method: RecoveryMethod, truth: &GgmGroundTruth, m: usize, cfg: &ComplexityConfig) -> usize {
    (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(cfg.seed, &[truth.dim() as u64, m as u64, k as u64]);
            let ok = sample_mvn(truth, m, seed)
                .and_then(|r| method.estimate(&r, truth, &cfg.tuning))
                .and_then(|th| edge_recovery_error(&th, truth))
                .map(|rep| rep.incorrect_edges_per_node <= cfg.target);
            match ok {
                Ok(v) => v,
                Err(e) => {
                    log::debug!("{} at m = {m}: {e}", method.name());
                    false
                }
            }
        })
        .filter(|&ok| ok)
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleComplexity {
    pub m_star: usize,
    /// `(m, successes)` for every sample size tried, in order.
    pub evaluated: Vec<(usize, usize)>,
}

/// Smallest `m` at which a majority (`⌈trials/2⌉`) of trials succeed: doubling
/// ladder from `ladder_start`, then bisection between the last two rungs.
pub fn sample_complexity(method: RecoveryMethod, truth: &GgmGroundTruth, cfg: &ComplexityConfig) -> Result<SampleComplexity> {
    if cfg.trials == 0 || cfg.ladder_start < 2 {
        return Err(Error::InvalidInput("need trials >= 1 and ladder_start >= 2".into()));
    }
    let need = cfg.trials.div_ceil(2);
    let mut evaluated = Vec::new();
    let passes = |m: usize, evaluated: &mut Vec<(usize, usize)>| {
        let s = recovery_successes(method, truth, m, cfg);
        evaluated.push((m, s));
        s >= need
    };
    let mut hi = cfg.ladder_start;
    loop {
        if hi > cfg.max_samples {
            return Err(Error::Unreachable { cap: cfg.max_samples });
        }
        if passes(hi, &mut evaluated) {
            break;
        }
        hi *= 2;
    }
    if hi == cfg.ladder_start {
        return Ok(SampleComplexity { m_star: hi, evaluated });
    }
    let mut lo = hi / 2;
    for _ in 0..cfg.refine_steps {
        if hi - lo <= 1 {
            break;
        }
        let mid = lo + (hi - lo) / 2;
        if passes(mid, &mut evaluated) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SampleComplexity { m_star: hi, evaluated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: String,
    pub n: usize,
    /// `None` when the sample cap was hit.
    pub m_star: Option<usize>,
}

/// `m*` for every method and model size `n` (Brownian + clique model).
pub fn sample_complexity_curve(
    methods: &[RecoveryMethod],
    sizes: &[usize],
    d: usize,
    rho: f64,
    cfg: &ComplexityConfig,
) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for &n in sizes {
        let truth = gen_brownian_clique_model(n, d, rho)?;
        for &m in methods {
            let m_star = match sample_complexity(m, &truth, cfg) {
                Ok(sc) => Some(sc.m_star),
                Err(Error::Unreachable { .. }) => None,
                Err(e) => return Err(e),
            };
            out.push(CurvePoint { method: m.name().to_string(), n, m_star });
        }
    }
    Ok(out)
}

/// Estimator compared on the precision scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrobeniusMethod {
    Oracle,
    Ggm(GgmMethod),
    /// Inverted after clipping any non-positive eigenvalues.
    Covariance(CovMethod),
}

impl FrobeniusMethod {
    pub fn name(self) -> &'static str {
        match self {
            FrobeniusMethod::Oracle => "oracle",
            FrobeniusMethod::Ggm(g) => g.name(),
            FrobeniusMethod::Covariance(c) => c.name(),
        }
    }

    pub fn precision(self, r: &ReturnsMatrix, truth: &GgmGroundTruth, tuning: &TuneConfig) -> Result<DMatrix<f64>> {
        match self {
            FrobeniusMethod::Oracle => Ok(truth.theta.clone()),
            FrobeniusMethod::Ggm(g) => Ok(tune_estimator(r, g, tuning)?.0.matrix),
            FrobeniusMethod::Covariance(c) => {
                let s = c.estimate(r)?.matrix;
                let s = if min_eigenvalue(&s)? > 0.0 { s } else { clip_spectrum(&s, REPAIR_FLOOR)?.0 };
                Ok(symmetrize(&solve_spd(&s, &DMatrix::identity(s.nrows(), s.nrows()))?.solution))
            }
        }
    }
}

impl std::str::FromStr for FrobeniusMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(FrobeniusMethod::Oracle);
        }
        if let Ok(g) = s.parse() {
            return Ok(FrobeniusMethod::Ggm(g));
        }
        s.parse().map(FrobeniusMethod::Covariance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrobeniusRow {
    pub method: String,
    pub mean: f64,
    pub std_error: f64,
    pub errors: Vec<f64>,
}

/// Mean and standard error of `‖Θ − Θ̂‖_F` over `reps` samples of `m` rows.
pub fn frobenius_experiment(
    truth: &GgmGroundTruth,
    methods: &[FrobeniusMethod],
    m: usize,
    reps: usize,
    seed: u64,
    tuning: &TuneConfig,
) -> Result<Vec<FrobeniusRow>> {
    if reps < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 repetitions, got {reps}")));
    }
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|k| {
            let r = sample_mvn(truth, m, derive_seed(seed, &[k as u64]))?;
            methods
                .iter()
                .map(|meth| Ok(frobenius(&(&truth.theta - meth.precision(&r, truth, tuning)?))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, meth)| {
            let errors: Vec<f64> = per_rep.iter().map(|row| row[j]).collect();
            let e = DVector::from_vec(errors.clone());
            let mean = e.mean();
            let var = e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            FrobeniusRow { method: meth.name().to_string(), mean, std_error: (var / reps as f64).sqrt(), errors }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::scatter;

    #[test]
    fn brownian_block_hand_values() {
        let t = gen_brownian_clique_model(4, 2, 0.95).unwrap();
        assert!((t.sigma[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((t.sigma[(0, 1)] - 0.75).abs() < 1e-15);
        assert!((t.sigma[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clique_before_rescaling() {
        let t = gen_brownian_clique_model(20, 5, 0.95).unwrap();
        // Θ₁ = s₀·Θ₀, so the ratio off/diag recovers Θ₀'s −ρ/d over 1 − ρ/d
        let (off, diag) = (t.theta[(10, 11)], t.theta[(10, 10)]);
        assert!((off / diag - (-0.19 / 0.81)).abs() < 1e-12);
        let s0 = diag / 0.81;
        assert!((off / s0 + 0.19).abs() < 1e-12);
    }

    #[test]
    fn model_is_self_consistent() {
        for (n, d) in [(20, 5), (40, 5), (80, 5), (12, 3), (2, 1)] {
            let t = gen_brownian_clique_model(n, d, 0.95).unwrap();
            let prod = &t.sigma * &t.theta;
            assert!((prod - DMatrix::identity(n, n)).amax() < 1e-8, "n = {n}");
            for i in n / 2..n {
                assert!((t.sigma[(i, i)] - 1.0).abs() < 1e-10);
            }
            for i in 0..n / 2 {
                for j in n / 2..n {
                    assert_eq!(t.theta[(i, j)], 0.0);
                }
            }
            assert!(t.theta.clone().cholesky().is_some());
            let brute = t.edges.iter().map(|&(i, j)| normalized(&t.theta, i, j)).fold(f64::INFINITY, f64::min);
            assert_eq!(t.kappa, brute);
        }
    }

    #[test]
    fn bad_dimensions() {
        assert!(matches!(gen_brownian_clique_model(20, 3, 0.9), Err(Error::BadDimensions(_))));
        assert!(matches!(gen_brownian_clique_model(21, 3, 0.9), Err(Error::BadDimensions(_))));
        assert!(gen_brownian_clique_model(20, 5, 1.0).is_err());
    }

    #[test]
    fn sampling_moments() {
        let t = gen_brownian_clique_model(4, 2, 0.5).unwrap();
        let m = 100_000;
        let r = sample_mvn(&t, m, 1).unwrap();
        let s = scatter(r.values());
        assert!((s - &t.sigma).amax() < 3.0 * (2.0 / m as f64).sqrt());
        for j in 0..4 {
            assert!(r.values().column(j).mean().abs() < 4.0 / (m as f64).sqrt());
        }
        assert_eq!(sample_mvn(&t, 10, 3).unwrap(), sample_mvn(&t, 10, 3).unwrap());
    }

    #[test]
    fn recovery_error_examples() {
        let t = gen_brownian_clique_model(20, 5, 0.95).unwrap();
        assert_eq!(edge_recovery_error(&t.theta, &t).unwrap().incorrect_edges_per_node, 0.0);
        let ident = edge_recovery_error(&DMatrix::identity(20, 20), &t).unwrap();
        assert_eq!(ident.incorrect_edges_per_node, t.edges.len() as f64 / 20.0);
        assert_eq!(ident.missed, t.edges);
        // brute-force count on a perturbed estimate
        let mut est = t.theta.clone();
        est[(0, 15)] = 5.0;
        est[(15, 0)] = 5.0;
        est[(10, 11)] = 0.0;
        est[(11, 10)] = 0.0;
        let rep = edge_recovery_error(&est, &t).unwrap();
        let mut wrong = 0;
        for j in 0..20 {
            for i in 0..j {
                let pred = est[(i, j)].abs() / (est[(i, i)] * est[(j, j)]).sqrt() > t.kappa / 2.0;
                if pred != t.edges.contains(&(i, j)) {
                    wrong += 1;
                }
            }
        }
        assert_eq!(rep.missed.len() + rep.spurious.len(), wrong);
        assert_eq!(wrong, 2);
    }

    #[test]
    fn oracle_sits_at_ladder_start() {
        let cfg = ComplexityConfig { trials: 1, ..ComplexityConfig::default() };
        let pts = sample_complexity_curve(&[RecoveryMethod::Oracle], &[20, 40], 5, 0.95, &cfg).unwrap();
        assert!(pts.iter().all(|p| p.m_star == Some(32)));
    }

    #[test]
    fn unreachable_cap() {
        let t = gen_brownian_clique_model(20, 5, 0.95).unwrap();
        let cfg = ComplexityConfig { trials: 1, max_samples: 40, ..ComplexityConfig::default() };
        // an impossible target
        let cfg = ComplexityConfig { target: -1.0, ..cfg };
        assert!(matches!(sample_complexity(RecoveryMethod::Oracle, &t, &cfg), Err(Error::Unreachable { cap: 40 })));
    }

    #[test]
    fn factor_model_block_structure() {
        let s = factor_model_sigma(12, 5, 3);
        assert!(s.clone().cholesky().is_some());
        assert_eq!(s, s.transpose());
        // within a sector the covariance carries both factors, across sectors only the market
        let (within, across) = (s[(0, 4)], s[(4, 5)]);
        assert!(within > MARKET_VARIANCE * 0.25 + SECTOR_VARIANCE * 0.25);
        assert!(across < MARKET_VARIANCE * 2.25 + 1e-15);
        // the short last sector groups assets 10 and 11
        assert!(s[(10, 11)] > MARKET_VARIANCE * 0.25 + SECTOR_VARIANCE * 0.25);
        assert_eq!(factor_model_sigma(12, 5, 3), s);
    }

    #[test]
    fn frobenius_oracle_and_consistency() {
        let t = GgmGroundTruth::from_sigma(factor_model_sigma(10, DEFAULT_SECTOR_SIZE, 1)).unwrap();
        let rows = frobenius_experiment(
            &t,
            &[FrobeniusMethod::Oracle, FrobeniusMethod::Covariance(CovMethod::Sample)],
            100_000,
            2,
            4,
            &TuneConfig::default(),
        )
        .unwrap();
        assert_eq!((rows[0].mean, rows[0].std_error), (0.0, 0.0));
        let rel = rows[1].mean / frobenius(&t.theta);
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
    }
}
