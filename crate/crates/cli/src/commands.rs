//! Subcommand bodies. Each one fills configuration defaults, validates them,
//! runs, and writes its outputs plus `manifest.toml`.

use std::collections::BTreeMap;

use precision_lab::compare::{mcs_report, mcs_run, spa_test, McsConfig, McsStatistic, DEFAULT_N_BOOT};
use precision_lab::cov::COV_METHODS;
use precision_lab::diagnostics::{diagnostics_table, summarize_precision};
use precision_lab::ggm::{GgmMethod, Params, GGM_METHODS};
use precision_lab::ingest::{filter_dates, load_intraday, load_returns, PanelKind, RollingWindowPlan};
use precision_lab::portfolio::{backtest as run_backtest, write_loss_series, LossSeries, PortfolioMethod};
use precision_lab::synthetic::{
    factor_model_sigma, frobenius_experiment, gen_brownian_clique_model, sample_complexity_curve, ComplexityConfig,
    FrobeniusMethod, GgmGroundTruth, RecoveryMethod, DEFAULT_SECTOR_SIZE,
};
use precision_lab::tuning::{tune_estimator, Criterion, TuneConfig};
use precision_lab::ReturnsMatrix;

use crate::config::{
    config_err, default_tuning, parse_criterion, parse_horizon, parse_methods, parse_search, read_grid_file, Allowed,
    MethodId, RunConfig,
};
use crate::output::{matrix_csv, table_csv, OutDir};

struct Tuning {
    base: TuneConfig,
    grids: BTreeMap<GgmMethod, Vec<Params>>,
}

impl Tuning {
    fn for_method(&self, g: GgmMethod) -> TuneConfig {
        TuneConfig { grid: self.grids.get(&g).cloned(), ..self.base.clone() }
    }
}

fn resolve_tuning(cfg: &mut RunConfig) -> anyhow::Result<Tuning> {
    let d = default_tuning();
    let t = &mut cfg.tuning;
    t.criterion = t.criterion.take().or(d.criterion);
    t.search = t.search.take().or(d.search);
    t.budget = t.budget.or(d.budget);
    t.folds = t.folds.or(d.folds);
    let folds = t.folds.unwrap_or_default();
    if folds < 2 {
        return config_err(format!("folds must be at least 2, got {folds}"));
    }
    let base = TuneConfig {
        criterion: parse_criterion(t.criterion.as_deref().unwrap_or_default())?,
        search: parse_search(t.search.as_deref().unwrap_or_default())?,
        folds,
        budget: t.budget.unwrap_or_default(),
        grid: None,
    };
    let grids = match &t.grid {
        Some(path) => read_grid_file(path)?,
        None => BTreeMap::new(),
    };
    Ok(Tuning { base, grids })
}

fn resolve_methods(cfg: &mut RunConfig, default: Vec<&str>, allowed: Allowed) -> anyhow::Result<Vec<MethodId>> {
    let names = cfg.methods.get_or_insert_with(|| default.into_iter().map(String::from).collect());
    parse_methods(names, allowed)
}

fn load_data(cfg: &mut RunConfig) -> anyhow::Result<ReturnsMatrix> {
    let Some(path) = cfg.data.clone() else {
        return config_err("no data file (set `data` or pass --data)");
    };
    let kind: PanelKind = cfg
        .kind
        .get_or_insert_with(|| "returns".into())
        .parse()
        .map_err(|e: precision_lab::Error| crate::config::ConfigError(e.to_string()))?;
    let r = load_returns(&path, kind)?;
    if cfg.from.is_some() || cfg.to.is_some() {
        return Ok(filter_dates(&r, cfg.from.as_deref(), cfg.to.as_deref())?);
    }
    Ok(r)
}

fn params_text(p: &BTreeMap<String, f64>) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

pub fn estimate(mut cfg: RunConfig) -> anyhow::Result<()> {
    let methods = resolve_methods(&mut cfg, vec!["sample"], Allowed { ewp: false, oracle: false, cov: true, ggm: true })?;
    let tuning = resolve_tuning(&mut cfg)?;
    let r = load_data(&mut cfg)?;
    let out = OutDir::create(&cfg)?;
    let mut rows = Vec::new();
    for m in methods {
        let (matrix, kind, params, score) = match m {
            MethodId::Cov(c) => {
                let est = c.estimate(&r)?;
                let mut p = BTreeMap::new();
                if let Some(w) = est.intensity {
                    p.insert("intensity".to_string(), w);
                }
                if let Some(t) = est.threshold {
                    p.insert("threshold".to_string(), t);
                }
                (est.matrix, "covariance", p, String::new())
            }
            MethodId::Ggm(g) => {
                let (est, tr) = tune_estimator(&r, g, &tuning.for_method(g))?;
                (est.matrix, "precision", tr.best_params, format!("{:e}", tr.best_score))
            }
            MethodId::Ewp | MethodId::Oracle => unreachable!("rejected by parse_methods"),
        };
        out.write(&format!("{}.csv", m.name()), &matrix_csv(&matrix, r.tickers())?)?;
        rows.push(vec![m.name().to_string(), kind.to_string(), params_text(&params), score]);
    }
    out.write("summary.csv", &table_csv(&["method", "estimate", "params", "cv_score"], &rows)?)?;
    out.write_manifest("estimate", &cfg)
}

pub fn diagnose(mut cfg: RunConfig) -> anyhow::Result<()> {
    let methods = resolve_methods(&mut cfg, GGM_METHODS.to_vec(), Allowed { ewp: false, oracle: false, cov: false, ggm: true })?;
    let tuning = resolve_tuning(&mut cfg)?;
    let r = load_data(&mut cfg)?;
    let out = OutDir::create(&cfg)?;
    let mut rows = Vec::new();
    for m in methods {
        let MethodId::Ggm(g) = m else { unreachable!("rejected by parse_methods") };
        let (est, tr) = tune_estimator(&r, g, &tuning.for_method(g))?;
        rows.push(summarize_precision(&est, &tr)?);
    }
    out.write("diagnostics.csv", &diagnostics_table(&rows)?)?;
    out.write_manifest("diagnose", &cfg)
}

fn valid_period_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn in_period(ts: &str, from: &str, to: &str) -> bool {
    ts >= from && &ts[..to.len().min(ts.len())] <= to
}

pub fn backtest(mut cfg: RunConfig) -> anyhow::Result<()> {
    let mut all = vec!["ewp"];
    all.extend(COV_METHODS);
    all.extend(GGM_METHODS);
    let methods = resolve_methods(&mut cfg, all, Allowed { ewp: true, oracle: false, cov: true, ggm: true })?;
    let tuning = resolve_tuning(&mut cfg)?;
    let horizon = parse_horizon(cfg.backtest.horizon.get_or_insert_with(|| "daily".into()))?;
    let window = *cfg.backtest.window.get_or_insert(horizon.default_window());
    let step = *cfg.backtest.step.get_or_insert(1);
    let plan = RollingWindowPlan::new(window, step, horizon)?;
    if let Some(bad) = cfg.periods.keys().find(|k| !valid_period_name(k)) {
        return config_err(format!("period name '{bad}' may only hold letters, digits, '_' and '-'"));
    }
    if tuning.base.folds > window {
        return config_err(format!("{} folds do not fit a window of {window}", tuning.base.folds));
    }
    let r = load_data(&mut cfg)?;
    let intraday = cfg.intraday.as_ref().map(load_intraday).transpose()?;
    let pm: Vec<PortfolioMethod> = methods
        .iter()
        .map(|m| match *m {
            MethodId::Ewp => PortfolioMethod::Ewp,
            MethodId::Cov(c) => PortfolioMethod::Covariance(c),
            MethodId::Ggm(g) => PortfolioMethod::Precision(g),
            MethodId::Oracle => unreachable!("rejected by parse_methods"),
        })
        .collect();
    let series = if tuning.grids.is_empty() {
        run_backtest(&r, &plan, &pm, &tuning.base, intraday.as_ref())?
    } else {
        // per-method grids: one backtest per method, merged in method order
        let mut merged = Vec::new();
        for (m, p) in methods.iter().zip(&pm) {
            let t = match m {
                MethodId::Ggm(g) => tuning.for_method(*g),
                _ => tuning.base.clone(),
            };
            merged.extend(run_backtest(&r, &plan, std::slice::from_ref(p), &t, intraday.as_ref())?);
        }
        align(merged)
    };
    let out = OutDir::create(&cfg)?;
    write_loss_series(out.path("losses.csv"), &series)?;
    for (name, period) in &cfg.periods {
        let keep: Vec<usize> = (0..series[0].len())
            .filter(|&t| in_period(&series[0].timestamps[t], &period.from, &period.to))
            .collect();
        if keep.is_empty() {
            log::warn!("period {name} holds no evaluation dates; no loss file written");
            continue;
        }
        let sub: Vec<LossSeries> = series
            .iter()
            .map(|s| LossSeries {
                method: s.method.clone(),
                timestamps: keep.iter().map(|&t| s.timestamps[t].clone()).collect(),
                losses: keep.iter().map(|&t| s.losses[t]).collect(),
            })
            .collect();
        write_loss_series(out.path(&format!("losses_{name}.csv")), &sub)?;
    }
    out.write_manifest("backtest", &cfg)
}

/// Keeps the timestamps every series has; separate runs may skip different windows.
fn align(series: Vec<LossSeries>) -> Vec<LossSeries> {
    let common: Vec<String> = series[0]
        .timestamps
        .iter()
        .filter(|t| series.iter().all(|s| s.timestamps.contains(t)))
        .cloned()
        .collect();
    series
        .into_iter()
        .map(|s| {
            let (timestamps, losses) =
                s.timestamps.iter().zip(&s.losses).filter(|(t, _)| common.contains(t)).map(|(t, l)| (t.clone(), *l)).unzip();
            LossSeries { method: s.method, timestamps, losses }
        })
        .collect()
}

pub fn compare(mut cfg: RunConfig) -> anyhow::Result<()> {
    let Some(path) = cfg.losses.clone() else {
        return config_err("no loss file (set `losses` or pass --losses)");
    };
    let c = &mut cfg.compare;
    let alpha = *c.alpha.get_or_insert(0.05);
    let n_boot = *c.n_boot.get_or_insert(DEFAULT_N_BOOT);
    let seed = *c.seed.get_or_insert(0);
    let block = c.block;
    let benchmark = c.benchmark.clone();
    let series = precision_lab::portfolio::read_loss_series(&path)?;
    if let Some(b) = &benchmark {
        if !series.iter().any(|s| &s.method == b) {
            let names: Vec<&str> = series.iter().map(|s| s.method.as_str()).collect();
            return config_err(format!("benchmark '{b}' not in {}; models: {}", path.display(), names.join(", ")));
        }
    }
    let mcs = |statistic| mcs_run(&series, &McsConfig { alpha, statistic, n_boot, block, seed });
    let max = mcs(McsStatistic::Max)?;
    let range = mcs(McsStatistic::Range)?;
    let out = OutDir::create(&cfg)?;
    out.write("mcs.csv", &mcs_report(&max, &range)?)?;
    let benchmarks: Vec<String> = match benchmark {
        Some(b) => vec![b],
        None => series.iter().map(|s| s.method.clone()).collect(),
    };
    let mut rows = Vec::new();
    if series.len() >= 2 {
        for b in &benchmarks {
            let spa = spa_test(&series, b, n_boot, max.block as f64, seed)?;
            rows.push(vec![
                b.clone(),
                format!("{:.4}", spa.p_value),
                format!("{:.4}", spa.p_lower),
                format!("{:.4}", spa.p_upper),
                format!("{:.6}", spa.statistic),
            ]);
        }
    }
    out.write("spa.csv", &table_csv(&["benchmark", "p_consistent", "p_lower", "p_upper", "statistic"], &rows)?)?;
    let sets = [(&max, "T_max"), (&range, "T_R")]
        .iter()
        .map(|(res, name)| vec![name.to_string(), res.ssm.join(";"), res.elimination_order.join(";"), res.block.to_string()])
        .collect::<Vec<_>>();
    out.write("mcs_sets.csv", &table_csv(&["statistic", "superior_set", "elimination_order", "block"], &sets)?)?;
    out.write_manifest("compare", &cfg)
}

pub fn synth(mut cfg: RunConfig) -> anyhow::Result<()> {
    let experiment = cfg.synth.experiment.get_or_insert_with(|| "recovery".into()).clone();
    match experiment.as_str() {
        "recovery" => synth_recovery(cfg),
        "frobenius" => synth_frobenius(cfg),
        other => config_err(format!("unknown experiment '{other}'; valid: recovery, frobenius")),
    }
}

fn synth_recovery(mut cfg: RunConfig) -> anyhow::Result<()> {
    let mut default = vec!["oracle"];
    default.extend(GGM_METHODS);
    let methods = resolve_methods(&mut cfg, default, Allowed { ewp: false, oracle: true, cov: false, ggm: true })?;
    let tuning = resolve_tuning(&mut cfg)?;
    let d = ComplexityConfig::default();
    let s = &mut cfg.synth;
    let sizes = s.sizes.get_or_insert_with(|| vec![20, 40, 80]).clone();
    let clique = *s.d.get_or_insert(5);
    let rho = *s.rho.get_or_insert(0.95);
    let base = ComplexityConfig {
        target: *s.target.get_or_insert(d.target),
        trials: *s.trials.get_or_insert(d.trials),
        ladder_start: *s.ladder_start.get_or_insert(d.ladder_start),
        max_samples: *s.max_samples.get_or_insert(d.max_samples),
        refine_steps: *s.refine_steps.get_or_insert(d.refine_steps),
        seed: *s.seed.get_or_insert(0),
        tuning: tuning.base.clone(),
    };
    if sizes.is_empty() {
        return config_err("no model sizes");
    }
    // surfaces a bad (n, d) pair before any fitting
    for &n in &sizes {
        gen_brownian_clique_model(n, clique, rho)?;
    }
    let rec: Vec<RecoveryMethod> = methods
        .iter()
        .map(|m| match *m {
            MethodId::Oracle => RecoveryMethod::Oracle,
            MethodId::Ggm(g) => RecoveryMethod::Ggm(g),
            _ => unreachable!("rejected by parse_methods"),
        })
        .collect();
    let out = OutDir::create(&cfg)?;
    for criterion in [Criterion::Cv1, Criterion::Cv2] {
        let mut rows = Vec::new();
        for m in &rec {
            let mut cc = base.clone();
            cc.tuning.criterion = criterion;
            if let RecoveryMethod::Ggm(g) = m {
                cc.tuning.grid = tuning.grids.get(g).cloned();
            }
            for p in sample_complexity_curve(std::slice::from_ref(m), &sizes, clique, rho, &cc)? {
                rows.push(vec![p.method, p.n.to_string(), p.m_star.map(|v| v.to_string()).unwrap_or_default()]);
            }
        }
        rows.sort_by_key(|r| sizes.iter().position(|&n| n.to_string() == r[1]));
        out.write(&format!("recovery_{}.csv", criterion.name()), &table_csv(&["method", "n", "m_star"], &rows)?)?;
    }
    out.write_manifest("synth", &cfg)
}

fn synth_frobenius(mut cfg: RunConfig) -> anyhow::Result<()> {
    let mut default = vec!["oracle"];
    default.extend(GGM_METHODS);
    default.extend(["sample", "lwl", "lwnl", "bdl"]);
    let methods = resolve_methods(&mut cfg, default, Allowed { ewp: false, oracle: true, cov: true, ggm: true })?;
    let tuning = resolve_tuning(&mut cfg)?;
    let s = &mut cfg.synth;
    let p = *s.p.get_or_insert(100);
    let m = *s.m.get_or_insert(150);
    let reps = *s.reps.get_or_insert(100);
    let sector = *s.sector_size.get_or_insert(DEFAULT_SECTOR_SIZE);
    let seed = *s.seed.get_or_insert(0);
    if p < 2 || sector == 0 || m < tuning.base.folds || reps < 2 {
        return config_err(format!("need p >= 2, sector_size >= 1, m >= folds and reps >= 2 (p={p}, sector_size={sector}, m={m}, reps={reps})"));
    }
    let truth = GgmGroundTruth::from_sigma(factor_model_sigma(p, sector, seed))?;
    let mut rows = Vec::new();
    for id in &methods {
        let (fm, t) = match *id {
            MethodId::Oracle => (FrobeniusMethod::Oracle, tuning.base.clone()),
            MethodId::Ggm(g) => (FrobeniusMethod::Ggm(g), tuning.for_method(g)),
            MethodId::Cov(c) => (FrobeniusMethod::Covariance(c), tuning.base.clone()),
            MethodId::Ewp => unreachable!("rejected by parse_methods"),
        };
        for row in frobenius_experiment(&truth, &[fm], m, reps, seed, &t)? {
            rows.push(vec![row.method, format!("{:.6e}", row.mean), format!("{:.6e}", row.std_error)]);
        }
    }
    let out = OutDir::create(&cfg)?;
    out.write("frobenius.csv", &table_csv(&["method", "mean", "std_error"], &rows)?)?;
    out.write_manifest("synth", &cfg)
}
