//! Global minimum-variance weights, the equal-weight baseline and rolling
//! out-of-sample backtests.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cov::{CovMethod, COV_METHODS};
use crate::error::{Error, Result};
use crate::ggm::{GgmMethod, GGM_METHODS};
use crate::ingest::{aggregate_horizon, horizon_windows, rolling_windows, Horizon, IntradayReturns, RollingWindowPlan};
use crate::linalg::{clip_spectrum, min_eigenvalue, solve_spd_vec, symmetrize};
use crate::tuning::{tune_estimator, TuneConfig};
use crate::types::{CovarianceEstimate, PrecisionEstimate, ReturnsMatrix};

/// Eigenvalue floor, relative to the largest eigenvalue, used to repair
/// indefinite inputs.
pub const REPAIR_FLOOR: f64 = 1e-8;
pub const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub weights: DVector<f64>,
    pub method: String,
    pub asof: String,
    /// Set when the input had to be eigenvalue-clipped first.
    pub repaired: bool,
}

/// Either side of the covariance / precision duality.
#[derive(Debug, Clone)]
pub enum MatrixEstimate {
    Covariance(CovarianceEstimate),
    Precision(PrecisionEstimate),
}

impl MatrixEstimate {
    pub fn method(&self) -> &str {
        match self {
            MatrixEstimate::Covariance(c) => &c.method,
            MatrixEstimate::Precision(p) => &p.method,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        match self {
            MatrixEstimate::Covariance(c) => &c.matrix,
            MatrixEstimate::Precision(p) => &p.matrix,
        }
    }
}

impl From<CovarianceEstimate> for MatrixEstimate {
    fn from(c: CovarianceEstimate) -> Self {
        MatrixEstimate::Covariance(c)
    }
}

impl From<PrecisionEstimate> for MatrixEstimate {
    fn from(p: PrecisionEstimate) -> Self {
        MatrixEstimate::Precision(p)
    }
}

/// Covariances must be positive definite to be solved; precisions only need
/// to be positive semidefinite (up to rounding) for `Θ1` to make sense.
fn repaired_if_indefinite(m: &DMatrix<f64>, strict: bool) -> Result<(DMatrix<f64>, bool)> {
    let m = symmetrize(m);
    let min = min_eigenvalue(&m)?;
    let ok = if strict { min > 0.0 } else { min >= -1e-12 * m.amax() };
    if ok {
        return Ok((m, false));
    }
    clip_spectrum(&m, REPAIR_FLOOR)
}

/// `Θ1 / 1ᵀΘ1`. Covariance inputs are solved by Cholesky rather than inverted.
pub fn min_variance_weights(est: &MatrixEstimate, asof: &str) -> Result<PortfolioWeights> {
    let strict = matches!(est, MatrixEstimate::Covariance(_));
    let (m, repaired) = repaired_if_indefinite(est.matrix(), strict)?;
    let p = m.nrows();
    let ones = DVector::from_element(p, 1.0);
    let x = match est {
        MatrixEstimate::Precision(_) => &m * &ones,
        MatrixEstimate::Covariance(_) => solve_spd_vec(&m, &ones)?,
    };
    let denom = x.sum();
    if !(denom > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(denom));
    }
    if repaired {
        log::debug!("{}: indefinite input clipped before computing weights", est.method());
    }
    Ok(PortfolioWeights { weights: x / denom, method: est.method().to_string(), asof: asof.to_string(), repaired })
}

pub fn equal_weights(p: usize) -> PortfolioWeights {
    PortfolioWeights {
        weights: DVector::from_element(p, 1.0 / p as f64),
        method: "ewp".into(),
        asof: String::new(),
        repaired: false,
    }
}

/// Variance (divisor n, about the sample mean) of the portfolio returns `test·w`.
/// A single row gives the squared return.
pub fn realized_loss(w: &PortfolioWeights, test: &DMatrix<f64>) -> Result<f64> {
    if test.ncols() != w.weights.len() {
        return Err(Error::DimensionMismatch { expected: w.weights.len(), found: test.ncols() });
    }
    let n = test.nrows();
    if n == 0 {
        return Err(Error::EmptyPanel { rows: 0 });
    }
    let r = test * &w.weights;
    if n == 1 {
        return Ok(r[0] * r[0]);
    }
    let mean = r.mean();
    Ok(r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64)
}

/// Per-method realized out-of-sample losses, one per evaluation window.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    pub method: String,
    pub timestamps: Vec<String>,
    pub losses: Vec<f64>,
}

impl LossSeries {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Checks equal, non-zero lengths and returns the T×M loss matrix.
pub fn loss_matrix(series: &[LossSeries]) -> Result<DMatrix<f64>> {
    let Some(first) = series.first() else {
        return Err(Error::IncomparableSeries("no loss series".into()));
    };
    let t = first.len();
    if t == 0 {
        return Err(Error::IncomparableSeries(format!("{} has no losses", first.method)));
    }
    if let Some(bad) = series.iter().find(|s| s.len() != t) {
        return Err(Error::IncomparableSeries(format!(
            "{} has {} losses, {} has {t}",
            bad.method,
            bad.len(),
            first.method
        )));
    }
    Ok(DMatrix::from_fn(t, series.len(), |i, j| series[j].losses[i]))
}

/// Writes `timestamp,method,loss` rows, time-major.
pub fn write_loss_series(path: impl AsRef<Path>, series: &[LossSeries]) -> Result<()> {
    loss_matrix(series)?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["timestamp", "method", "loss"])?;
    for t in 0..series[0].len() {
        for s in series {
            w.write_record([s.timestamps[t].as_str(), s.method.as_str(), &s.losses[t].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a loss file; methods keep their order of first appearance.
pub fn read_loss_series(path: impl AsRef<Path>) -> Result<Vec<LossSeries>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out: Vec<LossSeries> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::Parse(format!("loss file row {}: expected 3 fields", line + 2)));
        }
        let loss: f64 = rec[2].trim().parse().map_err(|_| Error::Parse(format!("bad loss '{}'", &rec[2])))?;
        let method = rec[1].trim();
        let idx = match out.iter().position(|s| s.method == method) {
            Some(i) => i,
            None => {
                out.push(LossSeries { method: method.to_string(), timestamps: vec![], losses: vec![] });
                out.len() - 1
            }
        };
        out[idx].timestamps.push(rec[0].trim().to_string());
        out[idx].losses.push(loss);
    }
    loss_matrix(&out)?;
    Ok(out)
}

/// A portfolio construction rule run inside the backtest.
#[derive(Debug, Clone)]
pub enum PortfolioMethod {
    Ewp,
    Covariance(CovMethod),
    Precision(GgmMethod),
    /// Weights from a known covariance matrix (synthetic experiments).
    Oracle(Arc<DMatrix<f64>>),
}

impl PortfolioMethod {
    pub fn name(&self) -> &str {
        match self {
            PortfolioMethod::Ewp => "ewp",
            PortfolioMethod::Covariance(c) => c.name(),
            PortfolioMethod::Precision(g) => g.name(),
            PortfolioMethod::Oracle(_) => "oracle",
        }
    }

    /// Weights from a training panel; GGM methods are re-tuned on it.
    pub fn weights(&self, train: &ReturnsMatrix, tuning: &TuneConfig) -> Result<PortfolioWeights> {
        let asof = train.dates().last().cloned().unwrap_or_default();
        let est: MatrixEstimate = match self {
            PortfolioMethod::Ewp => {
                let mut w = equal_weights(train.n_assets());
                w.asof = asof;
                return Ok(w);
            }
            PortfolioMethod::Covariance(c) => c.estimate(train)?.into(),
            PortfolioMethod::Precision(g) => tune_estimator(train, *g, tuning)?.0.into(),
            PortfolioMethod::Oracle(sigma) => CovarianceEstimate::new((**sigma).clone(), "oracle").into(),
        };
        min_variance_weights(&est, &asof)
    }
}

impl std::str::FromStr for PortfolioMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "ewp" {
            return Ok(PortfolioMethod::Ewp);
        }
        if let Ok(g) = s.parse::<GgmMethod>() {
            return Ok(PortfolioMethod::Precision(g));
        }
        s.parse::<CovMethod>().map(PortfolioMethod::Covariance).map_err(|_| {
            Error::InvalidInput(format!(
                "unknown method '{s}'; valid: ewp, {}, {}",
                GGM_METHODS.join(", "),
                COV_METHODS.join(", ")
            ))
        })
    }
}

/// Test rows for one evaluation: the training panel plus the out-of-sample
/// daily returns used to score it.
struct Evaluation {
    train: ReturnsMatrix,
    test: DMatrix<f64>,
    timestamp: String,
}

fn evaluations(r: &ReturnsMatrix, plan: &RollingWindowPlan, intraday: Option<&IntradayReturns>) -> Result<Vec<Evaluation>> {
    let mut out = Vec::new();
    match plan.horizon {
        Horizon::Daily => {
            let mut fallback = false;
            for w in rolling_windows(r.n_periods(), plan)? {
                let date = r.dates()[w.test.start].clone();
                let test = match intraday.and_then(|d| d.for_date(&date)) {
                    Some(m) if m.nrows() > 0 => m.clone(),
                    _ => {
                        fallback = true;
                        r.values().rows(w.test.start, w.test.len()).into_owned()
                    }
                };
                out.push(Evaluation { train: r.rows(w.train.start, w.train.end)?, test, timestamp: date });
            }
            if fallback {
                log::info!("no intra-day returns for some test days; using the squared next-day return");
            }
        }
        h => {
            let agg = aggregate_horizon(r, h.days())?;
            for w in horizon_windows(r.n_periods(), plan)? {
                out.push(Evaluation {
                    train: agg.rows(w.train.start, w.train.end)?,
                    test: r.values().rows(w.test_daily.start, w.test_daily.len()).into_owned(),
                    timestamp: r.dates()[w.test_daily.end - 1].clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Rolling-window backtest. Every method is refit (and GGM methods re-tuned) on
/// each training window and scored on the following test period. A window on
/// which every method fails is skipped; a failure of only some methods aborts.
pub fn backtest(
    r: &ReturnsMatrix,
    plan: &RollingWindowPlan,
    methods: &[PortfolioMethod],
    tuning: &TuneConfig,
    intraday: Option<&IntradayReturns>,
) -> Result<Vec<LossSeries>> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("backtest needs at least one method".into()));
    }
    if let Some(d) = intraday {
        if d.tickers.len() != r.n_assets() {
            return Err(Error::DimensionMismatch { expected: r.n_assets(), found: d.tickers.len() });
        }
    }
    let evals = evaluations(r, plan, intraday)?;
    let per_window: Vec<Vec<Result<f64>>> = evals
        .par_iter()
        .map(|ev| {
            methods
                .iter()
                .map(|m| m.weights(&ev.train, tuning).and_then(|w| realized_loss(&w, &ev.test)))
                .collect()
        })
        .collect();
    let mut out: Vec<LossSeries> = methods
        .iter()
        .map(|m| LossSeries { method: m.name().to_string(), timestamps: vec![], losses: vec![] })
        .collect();
    for (ev, results) in evals.iter().zip(per_window) {
        if results.iter().all(|r| r.is_err()) {
            log::warn!("window ending {}: every method failed, skipped", ev.timestamp);
            continue;
        }
        for (series, res) in out.iter_mut().zip(results) {
            series.losses.push(res?);
            series.timestamps.push(ev.timestamp.clone());
        }
    }
    loss_matrix(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(p, p) * 0.5
    }

    fn cov(m: DMatrix<f64>) -> MatrixEstimate {
        CovarianceEstimate::new(m, "test").into()
    }

    #[test]
    fn identity_precision_gives_equal_weights() {
        let est: MatrixEstimate = PrecisionEstimate::new(DMatrix::identity(4, 4), "i").into();
        let w = min_variance_weights(&est, "d").unwrap();
        assert_eq!(w.weights, DVector::from_element(4, 0.25));
    }

    #[test]
    fn diagonal_covariance_closed_form() {
        let w = min_variance_weights(&cov(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))), "d").unwrap();
        assert_abs_diff_eq!(w.weights[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.weights[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_kkt_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = 10;
            let s = random_spd(p, &mut rng);
            // [2Σ 1; 1ᵀ 0][w; μ] = [0; 1]
            let mut k = DMatrix::zeros(p + 1, p + 1);
            k.view_mut((0, 0), (p, p)).copy_from(&(&s * 2.0));
            for i in 0..p {
                k[(i, p)] = 1.0;
                k[(p, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(p + 1);
            rhs[p] = 1.0;
            let sol = k.lu().solve(&rhs).unwrap();
            let w = min_variance_weights(&cov(s), "d").unwrap();
            assert!((w.weights - sol.rows(0, p)).amax() < 1e-8);
        }
    }

    #[test]
    fn indefinite_input_is_repaired_and_flagged() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let w = min_variance_weights(&cov(m), "d").unwrap();
        assert!(w.repaired);
        assert_abs_diff_eq!(w.weights.sum(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_denominator() {
        // Θ1 sums to zero
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let est: MatrixEstimate = PrecisionEstimate::new(m, "x").into();
        assert!(matches!(min_variance_weights(&est, "d"), Err(Error::DegenerateDenominator(_))));
    }

    #[test]
    fn equal_weights_sum_to_one() {
        for p in 1..=500 {
            assert!((equal_weights(p).weights.sum() - 1.0).abs() < 1e-10);
        }
        assert_eq!(equal_weights(1).weights[0], 1.0);
    }

    #[test]
    fn realized_loss_examples() {
        let w = equal_weights(2);
        let test = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(realized_loss(&w, &test).unwrap(), 0.0);
        let constant = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.5, 0.1, 0.5, 0.1]);
        assert_abs_diff_eq!(realized_loss(&w, &constant).unwrap(), 0.0, epsilon = 1e-18);
        let one = DMatrix::from_row_slice(1, 2, &[0.2, 0.4]);
        assert_abs_diff_eq!(realized_loss(&w, &one).unwrap(), 0.09, epsilon = 1e-15);
        assert!(realized_loss(&w, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn realized_loss_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let test = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-0.05..0.05));
        let w = PortfolioWeights {
            weights: DVector::from_vec(vec![0.4, 0.3, 0.2, 0.1]),
            method: "x".into(),
            asof: String::new(),
            repaired: false,
        };
        let mut series = Vec::new();
        for t in 0..20 {
            let mut s = 0.0;
            for j in 0..4 {
                s += test[(t, j)] * w.weights[j];
            }
            series.push(s);
        }
        let mean = series.iter().sum::<f64>() / 20.0;
        let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 20.0;
        assert_abs_diff_eq!(realized_loss(&w, &test).unwrap(), var, epsilon = 1e-12);
    }

    #[test]
    fn loss_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let s = vec![
            LossSeries { method: "a".into(), timestamps: vec!["d1".into(), "d2".into()], losses: vec![0.1, 1e-7 / 3.0] },
            LossSeries { method: "b".into(), timestamps: vec!["d1".into(), "d2".into()], losses: vec![0.2, 0.3] },
        ];
        write_loss_series(&path, &s).unwrap();
        assert_eq!(read_loss_series(&path).unwrap(), s);
        let bad = vec![s[0].clone(), LossSeries { losses: vec![0.1], timestamps: vec!["d1".into()], ..s[1].clone() }];
        assert!(matches!(write_loss_series(&path, &bad), Err(Error::IncomparableSeries(_))));
    }

    #[test]
    fn backtest_single_window_is_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = DMatrix::from_fn(31, 3, |_, _| rng.random_range(-0.02..0.02));
        let r = ReturnsMatrix::from_values(v).unwrap();
        let plan = RollingWindowPlan::new(30, 1, Horizon::Daily).unwrap();
        let cfg = TuneConfig::default();
        let out = backtest(&r, &plan, &[PortfolioMethod::Covariance(CovMethod::Lwl), PortfolioMethod::Ewp], &cfg, None)
            .unwrap();
        assert_eq!(out[0].len(), 1);
        let train = r.rows(0, 30).unwrap();
        let w = min_variance_weights(&CovMethod::Lwl.estimate(&train).unwrap().into(), "").unwrap();
        let direct = realized_loss(&w, &r.values().rows(30, 1).into_owned()).unwrap();
        assert_eq!(out[0].losses[0], direct);
        assert_eq!(out[0].timestamps[0], r.dates()[30]);
    }

    #[test]
    fn method_names_parse() {
        assert!(matches!("ewp".parse::<PortfolioMethod>().unwrap(), PortfolioMethod::Ewp));
        assert_eq!("glasso".parse::<PortfolioMethod>().unwrap().name(), "glasso");
        assert_eq!("lwnl".parse::<PortfolioMethod>().unwrap().name(), "lwnl");
        let err = "bogus".parse::<PortfolioMethod>().unwrap_err().to_string();
        assert!(err.contains("hybridmb") && err.contains("rie"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn scale_invariant_and_optimal(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_spd(5, &mut rng);
            let w = min_variance_weights(&cov(s.clone()), "").unwrap().weights;
            let wc = min_variance_weights(&cov(&s * c), "").unwrap().weights;
            prop_assert!((&w - &wc).amax() < 1e-10);
            prop_assert!((w.sum() - 1.0).abs() < 1e-10);
            let base = (w.transpose() * &s * &w)[0];
            for _ in 0..1000 {
                let mut v = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
                let shift = (1.0 - v.sum()) / 5.0;
                v.add_scalar_mut(shift);
                prop_assert!((v.transpose() * &s * &v)[0] >= base - 1e-12);
            }
        }
    }
}
