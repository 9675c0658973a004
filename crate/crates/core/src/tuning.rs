//! Hyperparameter selection by contiguous k-fold cross-validation, over a
//! finite grid or by Nelder–Mead on log-transformed parameters.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ggm::{GgmMethod, Params};
use crate::linalg::column_means;
use crate::portfolio::{min_variance_weights, realized_loss, MatrixEstimate};
use crate::types::{PrecisionEstimate, ReturnsMatrix};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_BUDGET: usize = 60;
/// Simplex diameter (transformed scale) at which Nelder–Mead stops.
pub const NM_DIAMETER_TOL: f64 = 1e-4;
/// Initial simplex edge on the transformed scale.
const NM_INITIAL_STEP: f64 = 0.5;

/// Contiguous, order-preserving folds. The first `T mod k` folds get one extra row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Range<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Training rows (all folds but `f`) in time order.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, r)| r.clone())
            .collect()
    }

    /// `(train, holdout)` panels for fold `f`.
    pub fn split(&self, r: &ReturnsMatrix, f: usize) -> Result<(ReturnsMatrix, ReturnsMatrix)> {
        let hold = &self.folds[f];
        Ok((r.select_rows(&self.train_rows(f))?, r.rows(hold.start, hold.end)?))
    }
}

pub fn kfold_split(t: usize, k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if t < k {
        return Err(Error::TooFewRows { required: k, rows: t });
    }
    let base = t / k;
    let extra = t % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(start..start + len);
        start += len;
    }
    Ok(FoldPlan { folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Criterion {
    /// Holdout minimum-variance portfolio variance.
    #[default]
    Cv1,
    /// Holdout nodewise regression residuals implied by Θ̂.
    Cv2,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Cv1 => "cv1",
            Criterion::Cv2 => "cv2",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv1" => Ok(Criterion::Cv1),
            "cv2" => Ok(Criterion::Cv2),
            other => Err(Error::InvalidInput(format!("unknown criterion '{other}'; valid: cv1, cv2"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Search {
    #[default]
    Grid,
    NelderMead,
}

impl Search {
    pub fn name(self) -> &'static str {
        match self {
            Search::Grid => "grid",
            Search::NelderMead => "nm",
        }
    }
}

impl std::str::FromStr for Search {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Search::Grid),
            "nm" | "nelder_mead" => Ok(Search::NelderMead),
            other => Err(Error::InvalidInput(format!("unknown search '{other}'; valid: grid, nm"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_params: Params,
    pub best_score: f64,
    /// Every evaluated point; failed points carry `+∞`.
    pub trace: Vec<(Params, f64)>,
    pub criterion: Criterion,
    pub search: Search,
    /// Nelder–Mead stopped on its evaluation budget rather than on the diameter test.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub criterion: Criterion,
    pub search: Search,
    pub folds: usize,
    /// Nelder–Mead evaluation budget.
    pub budget: usize,
    /// Overrides the method's default grid.
    pub grid: Option<Vec<Params>>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { criterion: Criterion::Cv1, search: Search::Grid, folds: DEFAULT_FOLDS, budget: DEFAULT_BUDGET, grid: None }
    }
}

/// Holdout variance of the minimum-variance portfolio built from `est`.
pub fn cv1_objective(est: &MatrixEstimate, holdout: &DMatrix<f64>) -> Result<f64> {
    let w = min_variance_weights(est, "")?;
    realized_loss(&w, holdout)
}

/// `(1/(n·m)) Σ_i Σ_k (Z_ki + Σ_{j≠i} (Θ_ij+Θ_ji)/(2Θ_ii) Z_kj)²` with the holdout
/// standardized by the training means and standard deviations, and Θ̂ carried
/// to the same standardized scale.
pub fn cv2_objective(theta: &DMatrix<f64>, train: &DMatrix<f64>, holdout: &DMatrix<f64>) -> Result<f64> {
    let p = theta.nrows();
    if train.ncols() != p || holdout.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, found: holdout.ncols() });
    }
    let mean = column_means(train);
    let t = train.nrows() as f64;
    let sd: Vec<f64> =
        (0..p).map(|j| (train.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / t).sqrt()).collect();
    if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroResidualVariance { node: j });
    }
    let z = DMatrix::from_fn(holdout.nrows(), p, |k, j| (holdout[(k, j)] - mean[j]) / sd[j]);
    // standardized-scale precision: D Θ D
    let th = DMatrix::from_fn(p, p, |i, j| theta[(i, j)] * sd[i] * sd[j]);
    let mut b = DMatrix::zeros(p, p);
    for i in 0..p {
        let d = th[(i, i)];
        if !(d > 0.0) {
            return Err(Error::ZeroDiagonal(i));
        }
        for j in 0..p {
            b[(j, i)] = if i == j { 1.0 } else { (th[(i, j)] + th[(j, i)]) / (2.0 * d) };
        }
    }
    let resid = &z * b;
    Ok(resid.norm_squared() / (p * holdout.nrows()) as f64)
}

fn fit_checked(method: GgmMethod, r: &ReturnsMatrix, params: &Params) -> Result<PrecisionEstimate> {
    let est = method.fit(r, params)?;
    if est.degenerate {
        return Err(Error::Degenerate(format!("{} at {params:?} has a non-positive diagonal", method.name())));
    }
    Ok(est)
}

pub fn cv1_score(train: &ReturnsMatrix, holdout: &ReturnsMatrix, method: GgmMethod, params: &Params) -> Result<f64> {
    cv1_objective(&fit_checked(method, train, params)?.into(), holdout.values())
}

pub fn cv2_score(train: &ReturnsMatrix, holdout: &ReturnsMatrix, method: GgmMethod, params: &Params) -> Result<f64> {
    cv2_objective(&fit_checked(method, train, params)?.matrix, train.values(), holdout.values())
}

/// Mean score over the folds of `plan`.
pub fn cv_score(r: &ReturnsMatrix, plan: &FoldPlan, method: GgmMethod, params: &Params, criterion: Criterion) -> Result<f64> {
    let scores: Vec<f64> = (0..plan.k())
        .into_par_iter()
        .map(|f| {
            let (train, hold) = plan.split(r, f)?;
            match criterion {
                Criterion::Cv1 => cv1_score(&train, &hold, method, params),
                Criterion::Cv2 => cv2_score(&train, &hold, method, params),
            }
        })
        .collect::<Result<_>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Degenerate(format!("non-finite cv score at {params:?}")));
    }
    Ok(mean)
}

/// Larger is sparser.
fn sparsity_key(method: GgmMethod, params: &Params) -> f64 {
    let (name, larger_is_sparser) = method.sparsity_param();
    let v = params.get(name).copied().unwrap_or(0.0);
    if larger_is_sparser {
        v
    } else {
        -v
    }
}

fn pick_best(method: GgmMethod, trace: &[(Params, f64)]) -> Result<(Params, f64)> {
    let best = trace.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::AllPointsFailed);
    }
    let tie = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    let mut chosen: Option<&Params> = None;
    for (p, s) in trace {
        if *s - best <= tie && chosen.is_none_or(|c| sparsity_key(method, p) > sparsity_key(method, c)) {
            chosen = Some(p);
        }
    }
    Ok((chosen.cloned().unwrap_or_default(), best))
}

fn grid_on_plan(r: &ReturnsMatrix, plan: &FoldPlan, method: GgmMethod, grid: &[Params], criterion: Criterion) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty tuning grid".into()));
    }
    // fold-major so that a method can share work across the grid within a fold
    let per_fold: Vec<Vec<Result<f64>>> = (0..plan.k())
        .into_par_iter()
        .map(|f| match plan.split(r, f) {
            Ok((train, hold)) => method
                .fit_many(&train, grid)
                .into_iter()
                .zip(grid)
                .map(|(est, p)| {
                    let est = est.and_then(|e| {
                        if e.degenerate {
                            Err(Error::Degenerate(format!("{} at {p:?} has a non-positive diagonal", method.name())))
                        } else {
                            Ok(e)
                        }
                    })?;
                    match criterion {
                        Criterion::Cv1 => cv1_objective(&est.into(), hold.values()),
                        Criterion::Cv2 => cv2_objective(&est.matrix, train.values(), hold.values()),
                    }
                })
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                grid.iter().map(|_| Err(Error::InvalidInput(msg.clone()))).collect()
            }
        })
        .collect();
    let trace: Vec<(Params, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, p)| {
            let mut sum = 0.0;
            for fold in &per_fold {
                match &fold[g] {
                    Ok(v) => sum += v,
                    Err(e) => {
                        log::debug!("{} {p:?}: {e}", method.name());
                        return (p.clone(), f64::INFINITY);
                    }
                }
            }
            let mean = sum / per_fold.len() as f64;
            (p.clone(), if mean.is_finite() { mean } else { f64::INFINITY })
        })
        .collect();
    let (best_params, best_score) = pick_best(method, &trace)?;
    Ok(TuneResult { best_params, best_score, trace, criterion, search: Search::Grid, budget_exhausted: false })
}

/// Mean k-fold score at every grid point. Failed or degenerate points are
/// excluded; ties within 1e-12 go to the sparser point.
pub fn grid_search(r: &ReturnsMatrix, method: GgmMethod, grid: &[Params], criterion: Criterion) -> Result<TuneResult> {
    grid_on_plan(r, &kfold_split(r.n_periods(), DEFAULT_FOLDS)?, method, grid, criterion)
}

/// Outcome of an unconstrained minimization in the original parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub best_params: Params,
    pub best_score: f64,
    pub trace: Vec<(Params, f64)>,
    pub budget_exhausted: bool,
}

/// A continuous parameter on `(lo, hi)`; `hi = ∞` uses a log map, a finite
/// interval a scaled logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    fn to_free(self, x: f64) -> f64 {
        if self.hi.is_infinite() {
            (x - self.lo).ln()
        } else {
            let u = (x - self.lo) / (self.hi - self.lo);
            (u / (1.0 - u)).ln()
        }
    }

    fn from_free(self, y: f64) -> f64 {
        if self.hi.is_infinite() {
            self.lo + y.exp()
        } else {
            self.lo + (self.hi - self.lo) / (1.0 + (-y).exp())
        }
    }
}

/// Nelder–Mead (reflection 1, expansion 2, contraction ½, shrink ½) over the
/// transformed parameters named in `bounds`; other entries of `init` are held
/// fixed. Failed evaluations count as `+∞`. Stops when the simplex diameter
/// falls below 1e-4 or after `budget` evaluations.
pub fn nelder_mead_minimize<F>(objective: F, init: &Params, bounds: &[Bound], budget: usize) -> Result<NelderMeadOutcome>
where
    F: Fn(&Params) -> Result<f64>,
{
    if bounds.is_empty() {
        return Err(Error::InvalidInput("nelder-mead needs at least one continuous parameter".into()));
    }
    let mut x0 = DVector::zeros(bounds.len());
    for (k, b) in bounds.iter().enumerate() {
        let v = *init.get(b.name).ok_or_else(|| Error::InvalidInput(format!("missing initial value for {}", b.name)))?;
        if !(v > b.lo && v < b.hi) {
            return Err(Error::InvalidInput(format!("{} = {v} outside ({}, {})", b.name, b.lo, b.hi)));
        }
        x0[k] = b.to_free(v);
    }
    let to_params = |y: &DVector<f64>| {
        let mut p = init.clone();
        for (k, b) in bounds.iter().enumerate() {
            p.insert(b.name.to_string(), b.from_free(y[k]));
        }
        p
    };
    let mut trace: Vec<(Params, f64)> = Vec::new();
    let eval = |y: &DVector<f64>, trace: &mut Vec<(Params, f64)>| {
        let p = to_params(y);
        let s = objective(&p).ok().filter(|s| s.is_finite()).unwrap_or(f64::INFINITY);
        trace.push((p, s));
        s
    };
    let n = bounds.len();
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&x0, &mut trace);
    simplex.push((x0.clone(), f0));
    let mut exhausted = false;
    for k in 0..n {
        if trace.len() >= budget {
            exhausted = true;
            break;
        }
        let mut y = x0.clone();
        y[k] += NM_INITIAL_STEP;
        let f = eval(&y, &mut trace);
        simplex.push((y, f));
    }
    while !exhausted {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex.iter().skip(1).map(|(y, _)| (y - &simplex[0].0).amax()).fold(0.0, f64::max);
        if diameter < NM_DIAMETER_TOL {
            break;
        }
        if trace.len() >= budget {
            exhausted = true;
            break;
        }
        let centroid = simplex[..n].iter().fold(DVector::zeros(n), |acc, (y, _)| acc + y) / n as f64;
        let (worst, fw) = simplex[n].clone();
        let fb = simplex[0].1;
        let fsw = simplex[n - 1].1;
        let xr = &centroid + (&centroid - &worst);
        let fr = eval(&xr, &mut trace);
        if fr < fb {
            if trace.len() < budget {
                let xe = &centroid + (&centroid - &worst) * 2.0;
                let fe = eval(&xe, &mut trace);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else {
                simplex[n] = (xr, fr);
            }
            continue;
        }
        if fr < fsw {
            simplex[n] = (xr, fr);
            continue;
        }
        if trace.len() >= budget {
            exhausted = true;
            break;
        }
        // outside contraction if the reflection improved on the worst, else inside
        let (xc, fc) = if fr < fw {
            let xc = &centroid + (&xr - &centroid) * 0.5;
            let fc = eval(&xc, &mut trace);
            (xc, fc)
        } else {
            let xc = &centroid + (&worst - &centroid) * 0.5;
            let fc = eval(&xc, &mut trace);
            (xc, fc)
        };
        if fc < fr.min(fw) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if trace.len() >= budget {
                exhausted = true;
                break;
            }
            let y = &best + (&v.0 - &best) * 0.5;
            let f = eval(&y, &mut trace);
            *v = (y, f);
        }
    }
    let (best_params, best_score) = trace
        .iter()
        .fold(None::<&(Params, f64)>, |acc, e| match acc {
            Some(a) if a.1 <= e.1 => Some(a),
            _ => Some(e),
        })
        .map(|(p, s)| (p.clone(), *s))
        .expect("at least one evaluation");
    Ok(NelderMeadOutcome { best_params, best_score, trace, budget_exhausted: exhausted })
}

fn bounds_for(method: GgmMethod) -> Vec<Bound> {
    method.continuous_params().into_iter().map(|(name, lo, hi)| Bound { name, lo, hi }).collect()
}

/// Grid search, optionally refined by Nelder–Mead seeded at the best grid
/// point on the same folds, then a refit on the full panel.
pub fn tune_estimator(r: &ReturnsMatrix, method: GgmMethod, cfg: &TuneConfig) -> Result<(PrecisionEstimate, TuneResult)> {
    let plan = kfold_split(r.n_periods(), cfg.folds)?;
    let default_grid;
    let grid = match &cfg.grid {
        Some(g) => g.as_slice(),
        None => {
            default_grid = method.default_grid();
            default_grid.as_slice()
        }
    };
    let mut result = grid_on_plan(r, &plan, method, grid, cfg.criterion)?;
    if cfg.search == Search::NelderMead {
        let nm = nelder_mead_minimize(
            |p| cv_score(r, &plan, method, p, cfg.criterion),
            &result.best_params,
            &bounds_for(method),
            cfg.budget,
        )?;
        if nm.best_score < result.best_score {
            result.best_params = nm.best_params;
            result.best_score = nm.best_score;
        }
        result.trace.extend(nm.trace);
        result.search = Search::NelderMead;
        result.budget_exhausted = nm.budget_exhausted;
    }
    let est = fit_checked(method, r, &result.best_params)?;
    Ok((est, result))
}
