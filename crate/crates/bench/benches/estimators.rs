use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use precision_lab::cov::{shrink_lw_linear, shrink_lw_nonlinear};
use precision_lab::ggm::{clime_solve, glasso_solve, GgmMethod, Params, GLASSO_TOL};
use precision_lab::portfolio::min_variance_weights;
use precision_lab::tuning::{tune_estimator, TuneConfig};
use precision_lab::CovarianceEstimate;
use precision_lab_bench::{factor_correlation, factor_panel};

fn glasso(c: &mut Criterion) {
    let mut g = c.benchmark_group("glasso");
    for p in [20, 50, 100] {
        let s = factor_correlation(p, 250, 1);
        g.bench_with_input(BenchmarkId::from_parameter(p), &s, |b, s| b.iter(|| glasso_solve(black_box(s), 0.1, GLASSO_TOL)));
    }
    g.finish();
}

fn clime(c: &mut Criterion) {
    let mut g = c.benchmark_group("clime");
    g.sample_size(10);
    for p in [20, 50] {
        let s = factor_correlation(p, 250, 2);
        g.bench_with_input(BenchmarkId::from_parameter(p), &s, |b, s| b.iter(|| clime_solve(black_box(s), 0.1)));
    }
    g.finish();
}

fn nodewise(c: &mut Criterion) {
    let r = factor_panel(50, 250, 3);
    let mut g = c.benchmark_group("nodewise_p50");
    let mb = Params::from([("lambda".to_string(), 0.1)]);
    let greedy = Params::from([("t_steps".to_string(), 10.0), ("nu".to_string(), 0.05)]);
    let hybrid = Params::from([("lambda".to_string(), 0.4), ("nu".to_string(), 0.05)]);
    g.bench_function("mb", |b| b.iter(|| GgmMethod::Mb.fit(black_box(&r), &mb)));
    g.bench_function("greedy", |b| b.iter(|| GgmMethod::Greedy.fit(black_box(&r), &greedy)));
    g.bench_function("hybridmb", |b| b.iter(|| GgmMethod::HybridMb.fit(black_box(&r), &hybrid)));
    g.finish();
}

fn shrinkage(c: &mut Criterion) {
    let r = factor_panel(100, 150, 4);
    let mut g = c.benchmark_group("shrinkage_p100");
    g.bench_function("lwl", |b| b.iter(|| shrink_lw_linear(black_box(&r))));
    g.bench_function("lwnl", |b| b.iter(|| shrink_lw_nonlinear(black_box(&r))));
    let est = CovarianceEstimate::new(shrink_lw_linear(&r).estimate.matrix, "lwl").into();
    g.bench_function("gmv_weights", |b| b.iter(|| min_variance_weights(black_box(&est), "")));
    g.finish();
}

fn tuning(c: &mut Criterion) {
    let r = factor_panel(30, 150, 5);
    let mut g = c.benchmark_group("tune_p30");
    g.sample_size(10);
    for m in [GgmMethod::Glasso, GgmMethod::Greedy, GgmMethod::Clime] {
        g.bench_function(m.name(), |b| b.iter(|| tune_estimator(black_box(&r), m, &TuneConfig::default())));
    }
    g.finish();
}

criterion_group!(benches, glasso, clime, nodewise, shrinkage, tuning);
criterion_main!(benches);
