//! Bootstrap comparison of loss series: Model Confidence Set with a circular
//! block bootstrap, and the SPA test with a stationary bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::portfolio::{loss_matrix, LossSeries};

pub const DEFAULT_N_BOOT: usize = 5_000;
pub const DEFAULT_MAX_LAG: usize = 10;
const T_CRIT: f64 = 1.96;

/// Pairwise loss differentials `d_ij,t = l_i,t − l_j,t` and their row means
/// `d_i·,t = (1/(M−1)) Σ_{j≠i} d_ij,t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDifferentials {
    /// Indexed `[i][j]`, each of length T.
    pub d_ij: Vec<Vec<DVector<f64>>>,
    pub d_i_dot: Vec<DVector<f64>>,
}

impl LossDifferentials {
    pub fn new(losses: &DMatrix<f64>) -> Self {
        let m = losses.ncols();
        let d_ij: Vec<Vec<DVector<f64>>> =
            (0..m).map(|i| (0..m).map(|j| losses.column(i) - losses.column(j)).collect()).collect();
        let d_i_dot = (0..m)
            .map(|i| {
                let mut acc = DVector::zeros(losses.nrows());
                for j in (0..m).filter(|&j| j != i) {
                    acc += &d_ij[i][j];
                }
                acc / (m.max(2) - 1) as f64
            })
            .collect();
        Self { d_ij, d_i_dot }
    }
}

/// Number of leading AR lags with |t| > 1.96 in a least-squares AR(`max_lag`)
/// fit with intercept. Constant series give 0.
fn significant_leading_lags(y: &DVector<f64>, max_lag: usize) -> usize {
    let t = y.len();
    let n = t - max_lag;
    let k = max_lag + 1;
    let mean = y.mean();
    if y.iter().all(|v| (v - mean).abs() <= 1e-300_f64.max(1e-14 * mean.abs())) {
        return 0;
    }
    let x = DMatrix::from_fn(n, k, |r, c| if c == 0 { 1.0 } else { y[max_lag + r - c] });
    let target = DVector::from_fn(n, |r, _| y[max_lag + r]);
    let Some(xtx_inv) = x.tr_mul(&x).try_inverse() else {
        return 0;
    };
    let coef = &xtx_inv * x.tr_mul(&target);
    let resid = &target - &x * &coef;
    let dof = n.saturating_sub(k).max(1) as f64;
    let s2 = resid.norm_squared() / dof;
    (1..k)
        .take_while(|&c| {
            let se = (s2 * xtx_inv[(c, c)]).sqrt();
            se > 0.0 && (coef[c] / se).abs() > T_CRIT
        })
        .count()
}

/// Block length from AR fits to every pairwise differential: the largest
/// number of leading significant lags, at least 1.
pub fn ar_block_length(d: &LossDifferentials, max_lag: usize) -> Result<usize> {
    let m = d.d_ij.len();
    let t = d.d_i_dot.first().map_or(0, |v| v.len());
    if max_lag == 0 {
        return Err(Error::InvalidInput("max_lag must be >= 1".into()));
    }
    if t <= 2 * max_lag {
        return Err(Error::SeriesTooShort { len: t, max_lag });
    }
    let mut best = 1;
    for i in 0..m {
        for j in i + 1..m {
            best = best.max(significant_leading_lags(&d.d_ij[i][j], max_lag));
        }
    }
    Ok(best)
}

fn replicate_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

/// Circular moving-block resample of `0..t`.
pub fn block_bootstrap_indices(t: usize, block: usize, seed: u64) -> Vec<usize> {
    block_indices(t, block, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn block_indices(t: usize, block: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(block >= 1 && block <= t, "block must lie in 1..=T");
    let mut out = Vec::with_capacity(t);
    while out.len() < t {
        let start = rng.random_range(0..t);
        for k in 0..block.min(t - out.len()) {
            out.push((start + k) % t);
        }
    }
    out
}

/// Politis–Romano stationary bootstrap: geometric block lengths with the given
/// mean, wrapping circularly.
pub fn stationary_bootstrap_indices(t: usize, mean_block: f64, seed: u64) -> Vec<usize> {
    stationary_indices(t, mean_block, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn stationary_indices(t: usize, mean_block: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(mean_block >= 1.0, "mean block length must be >= 1");
    let q = 1.0 / mean_block;
    let mut out = Vec::with_capacity(t);
    let mut cur = rng.random_range(0..t);
    out.push(cur);
    while out.len() < t {
        cur = if rng.random::<f64>() < q { rng.random_range(0..t) } else { (cur + 1) % t };
        out.push(cur);
    }
    out
}

/// `n_boot × M` matrix of resampled column means.
fn bootstrap_means<F>(losses: &DMatrix<f64>, n_boot: usize, seed: u64, indices: F) -> DMatrix<f64>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<usize> + Sync,
{
    let (t, m) = losses.shape();
    let rows: Vec<Vec<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let idx = indices(&mut replicate_rng(seed, b as u64));
            let mut sums = vec![0.0; m];
            for &i in &idx {
                for (j, s) in sums.iter_mut().enumerate() {
                    *s += losses[(i, j)];
                }
            }
            sums.into_iter().map(|s| s / t as f64).collect()
        })
        .collect();
    DMatrix::from_fn(n_boot, m, |b, j| rows[b][j])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum McsStatistic {
    /// `T_R = max |t_ij|`, eliminating `argmax_i max_j t_ij`.
    Range,
    /// `T_max = max t_i·`, eliminating `argmax_i t_i·`.
    Max,
}

impl McsStatistic {
    pub fn name(self) -> &'static str {
        match self {
            McsStatistic::Range => "T_R",
            McsStatistic::Max => "T_max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsConfig {
    pub alpha: f64,
    pub statistic: McsStatistic,
    pub n_boot: usize,
    /// Block length; chosen by [`ar_block_length`] when `None`.
    pub block: Option<usize>,
    pub seed: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self { alpha: 0.05, statistic: McsStatistic::Max, n_boot: DEFAULT_N_BOOT, block: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsResult {
    /// Model names in input order.
    pub models: Vec<String>,
    /// Surviving models, ranked by `v` ascending.
    pub ssm: Vec<String>,
    /// Models removed before the procedure stopped, with their round (from 1).
    pub eliminated: Vec<(String, usize)>,
    /// Full elimination order (every model but the last one standing).
    pub elimination_order: Vec<String>,
    /// Monotonized MCS p-values, input order.
    pub mcs_pvalues: Vec<f64>,
    /// Elimination statistic of each model in the last round it took part in
    /// (the stopping round for survivors), input order.
    pub v: Vec<f64>,
    /// Rank (1 = best), input order.
    pub rank: Vec<usize>,
    pub statistic_kind: McsStatistic,
    pub alpha: f64,
    pub block: usize,
}

struct Round {
    set: Vec<usize>,
    /// Per-member elimination statistic, aligned with `set`.
    stats: Vec<f64>,
    pvalue: f64,
    eliminated: usize,
}

/// One round of the test on the model subset `set`.
fn mcs_round(set: &[usize], means: &DVector<f64>, boot: &DMatrix<f64>, kind: McsStatistic) -> Round {
    let m = set.len();
    let n_boot = boot.nrows();
    let mut t_stat_boot = vec![0.0f64; n_boot];
    let mut stats = vec![0.0; m];
    let stat;
    match kind {
        McsStatistic::Max => {
            let dot = |row: &dyn Fn(usize) -> f64, a: usize| {
                let others: f64 = (0..m).filter(|&b| b != a).map(|b| row(set[b])).sum();
                row(set[a]) - others / (m - 1) as f64
            };
            let d_hat: Vec<f64> = (0..m).map(|a| dot(&|k| means[k], a)).collect();
            let d_boot: Vec<Vec<f64>> =
                (0..n_boot).map(|b| (0..m).map(|a| dot(&|k| boot[(b, k)], a)).collect()).collect();
            let sd: Vec<f64> = (0..m)
                .map(|a| (d_boot.iter().map(|r| (r[a] - d_hat[a]).powi(2)).sum::<f64>() / n_boot as f64).sqrt())
                .collect();
            for a in 0..m {
                stats[a] = if sd[a] > 0.0 { d_hat[a] / sd[a] } else { 0.0 };
            }
            stat = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (b, row) in d_boot.iter().enumerate() {
                t_stat_boot[b] = (0..m)
                    .map(|a| if sd[a] > 0.0 { (row[a] - d_hat[a]) / sd[a] } else { 0.0 })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        McsStatistic::Range => {
            let mut sd = DMatrix::zeros(m, m);
            for a in 0..m {
                for c in a + 1..m {
                    let d = means[set[a]] - means[set[c]];
                    let v = (0..n_boot)
                        .map(|b| (boot[(b, set[a])] - boot[(b, set[c])] - d).powi(2))
                        .sum::<f64>()
                        / n_boot as f64;
                    sd[(a, c)] = v.sqrt();
                    sd[(c, a)] = sd[(a, c)];
                }
            }
            let t = DMatrix::from_fn(m, m, |a, c| {
                if a != c && sd[(a, c)] > 0.0 {
                    (means[set[a]] - means[set[c]]) / sd[(a, c)]
                } else {
                    0.0
                }
            });
            for a in 0..m {
                stats[a] = (0..m).filter(|&c| c != a).map(|c| t[(a, c)]).fold(f64::NEG_INFINITY, f64::max);
            }
            stat = t.amax();
            for (b, tb) in t_stat_boot.iter_mut().enumerate() {
                let mut mx = 0.0f64;
                for a in 0..m {
                    for c in a + 1..m {
                        if sd[(a, c)] > 0.0 {
                            let d = means[set[a]] - means[set[c]];
                            let db = boot[(b, set[a])] - boot[(b, set[c])];
                            mx = mx.max(((db - d) / sd[(a, c)]).abs());
                        }
                    }
                }
                *tb = mx;
            }
        }
    }
    let pvalue = t_stat_boot.iter().filter(|&&x| x >= stat).count() as f64 / n_boot as f64;
    let worst = (0..m).fold(0, |best, a| if stats[a] > stats[best] { a } else { best });
    Round { set: set.to_vec(), stats, pvalue, eliminated: set[worst] }
}

/// Model Confidence Set. Runs the elimination to the end so that every model
/// gets a monotonized p-value; the superior set holds the models whose
/// p-value is at least `alpha`.
pub fn mcs_run(losses: &[LossSeries], cfg: &McsConfig) -> Result<McsResult> {
    let l = loss_matrix(losses)?;
    let (t, m) = l.shape();
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if cfg.n_boot < 100 {
        return Err(Error::InvalidInput(format!("n_boot must be >= 100, got {}", cfg.n_boot)));
    }
    let models: Vec<String> = losses.iter().map(|s| s.method.clone()).collect();
    let block = match cfg.block {
        Some(b) if b >= 1 && b <= t => b,
        Some(b) => return Err(Error::InvalidInput(format!("block length {b} outside 1..={t}"))),
        None if m >= 2 => ar_block_length(&LossDifferentials::new(&l), DEFAULT_MAX_LAG.min((t - 1) / 2).max(1))?,
        None => 1,
    };
    if m == 1 {
        return Ok(McsResult {
            ssm: models.clone(),
            models,
            eliminated: vec![],
            elimination_order: vec![],
            mcs_pvalues: vec![1.0],
            v: vec![0.0],
            rank: vec![1],
            statistic_kind: cfg.statistic,
            alpha: cfg.alpha,
            block,
        });
    }
    let means = DVector::from_fn(m, |j, _| l.column(j).mean());
    let boot = bootstrap_means(&l, cfg.n_boot, cfg.seed, |rng| block_indices(t, block, rng));

    let mut set: Vec<usize> = (0..m).collect();
    let mut rounds: Vec<Round> = Vec::new();
    while set.len() > 1 {
        let round = mcs_round(&set, &means, &boot, cfg.statistic);
        set.retain(|&k| k != round.eliminated);
        rounds.push(round);
    }
    let last = set[0];

    let mut pvalues = vec![1.0; m];
    let mut running = 0.0f64;
    for r in &rounds {
        running = running.max(r.pvalue);
        pvalues[r.eliminated] = running;
    }
    let stop = rounds.iter().position(|r| pvalues[r.eliminated] >= cfg.alpha).unwrap_or(rounds.len());

    let mut v = vec![0.0; m];
    for r in &rounds[..stop] {
        let a = r.set.iter().position(|&k| k == r.eliminated).expect("member");
        v[r.eliminated] = r.stats[a];
    }
    let survivors: Vec<usize> = if stop < rounds.len() { rounds[stop].set.clone() } else { vec![last] };
    let source = rounds.get(stop).or(rounds.last()).expect("at least one round");
    for &k in &survivors {
        if let Some(a) = source.set.iter().position(|&x| x == k) {
            v[k] = source.stats[a];
        }
    }
    let mut ranked = survivors.clone();
    ranked.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut rank = vec![0; m];
    let mut next = 1;
    for &k in &ranked {
        rank[k] = next;
        next += 1;
    }
    for r in rounds[..stop].iter().rev() {
        rank[r.eliminated] = next;
        next += 1;
    }
    Ok(McsResult {
        ssm: ranked.iter().map(|&k| models[k].clone()).collect(),
        eliminated: rounds[..stop].iter().enumerate().map(|(i, r)| (models[r.eliminated].clone(), i + 1)).collect(),
        elimination_order: rounds.iter().map(|r| models[r.eliminated].clone()).collect(),
        models,
        mcs_pvalues: pvalues,
        v,
        rank,
        statistic_kind: cfg.statistic,
        alpha: cfg.alpha,
        block,
    })
}

/// Delimited report with columns `Model, Rank_M, v_M, MCS_M, Rank_R, v_R, MCS_R`,
/// rows in order of `Rank_M`.
pub fn mcs_report(max: &McsResult, range: &McsResult) -> Result<String> {
    if max.models != range.models {
        return Err(Error::InvalidInput("MCS results cover different models".into()));
    }
    let mut order: Vec<usize> = (0..max.models.len()).collect();
    order.sort_by_key(|&k| max.rank[k]);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Model", "Rank_M", "v_M", "MCS_M", "Rank_R", "v_R", "MCS_R"])?;
    for k in order {
        w.write_record([
            max.models[k].clone(),
            max.rank[k].to_string(),
            format!("{:.6}", max.v[k]),
            format!("{:.4}", max.mcs_pvalues[k]),
            range.rank[k].to_string(),
            format!("{:.6}", range.v[k]),
            format!("{:.4}", range.mcs_pvalues[k]),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("ascii output"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaResult {
    pub benchmark: String,
    /// Consistent p-value.
    pub p_value: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub statistic: f64,
}

/// SPA test of H₀: the benchmark is not outperformed, i.e. `E[L_0 − L_k] ≤ 0`
/// for every competitor `k`. Studentized by the bootstrap standard deviation
/// of each mean differential.
pub fn spa_test(losses: &[LossSeries], benchmark: &str, n_boot: usize, mean_block: f64, seed: u64) -> Result<SpaResult> {
    let l = loss_matrix(losses)?;
    let (t, m) = l.shape();
    let b0 = losses
        .iter()
        .position(|s| s.method == benchmark)
        .ok_or_else(|| Error::InvalidInput(format!("benchmark '{benchmark}' not among the loss series")))?;
    if m < 2 {
        return Err(Error::InvalidInput("SPA needs at least one competitor".into()));
    }
    if n_boot == 0 || !(mean_block >= 1.0) {
        return Err(Error::InvalidInput("SPA needs n_boot >= 1 and mean_block >= 1".into()));
    }
    let comp: Vec<usize> = (0..m).filter(|&k| k != b0).collect();
    let x = DMatrix::from_fn(t, comp.len(), |s, k| l[(s, b0)] - l[(s, comp[k])]);
    let xbar = DVector::from_fn(comp.len(), |k, _| x.column(k).mean());
    let boot = bootstrap_means(&x, n_boot, seed, |rng| stationary_indices(t, mean_block, rng));
    let tf = t as f64;
    let omega: Vec<f64> = (0..comp.len())
        .map(|k| (tf * (0..n_boot).map(|b| (boot[(b, k)] - xbar[k]).powi(2)).sum::<f64>() / n_boot as f64).sqrt())
        .collect();
    let active: Vec<usize> = (0..comp.len()).filter(|&k| omega[k] > 0.0).collect();
    let statistic = active.iter().map(|&k| tf.sqrt() * xbar[k] / omega[k]).fold(0.0, f64::max);
    let threshold = (2.0 * tf.ln().ln().max(0.0)).sqrt();
    let centre = |k: usize, which: u8| match which {
        0 => xbar[k].max(0.0),
        1 => {
            if tf.sqrt() * xbar[k] / omega[k] >= -threshold {
                xbar[k]
            } else {
                0.0
            }
        }
        _ => xbar[k],
    };
    let pvalue = |which: u8| {
        let exceed = (0..n_boot)
            .filter(|&b| {
                let tb = active
                    .iter()
                    .map(|&k| tf.sqrt() * (boot[(b, k)] - centre(k, which)) / omega[k])
                    .fold(0.0, f64::max);
                tb >= statistic
            })
            .count();
        exceed as f64 / n_boot as f64
    };
    Ok(SpaResult { benchmark: benchmark.to_string(), p_value: pvalue(1), p_lower: pvalue(0), p_upper: pvalue(2), statistic })
}
