//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use precision_lab::cov::sample_covariance;
use precision_lab::linalg::correlation_from_cov;
use precision_lab::portfolio::LossSeries;
use precision_lab::synthetic::{factor_model_sigma, sample_mvn_sigma, DEFAULT_SECTOR_SIZE};
use precision_lab::ReturnsMatrix;

/// `t` draws from the market + sector model with `p` assets.
pub fn factor_panel(p: usize, t: usize, seed: u64) -> ReturnsMatrix {
    sample_mvn_sigma(&factor_model_sigma(p, DEFAULT_SECTOR_SIZE, seed), t, seed).expect("factor model is PD")
}

/// Sample correlation matrix of [`factor_panel`].
pub fn factor_correlation(p: usize, t: usize, seed: u64) -> DMatrix<f64> {
    correlation_from_cov(&sample_covariance(&factor_panel(p, t, seed)).matrix).0
}

/// `m` loss series of length `t`, series `k` shifted up by `k · step`.
pub fn shifted_losses(m: usize, t: usize, step: f64, seed: u64) -> Vec<LossSeries> {
    let r = factor_panel(m.max(2), t, seed);
    (0..m)
        .map(|k| LossSeries {
            method: format!("m{k}"),
            timestamps: r.dates().to_vec(),
            losses: r.values().column(k).iter().map(|v| v * v * 1e4 + k as f64 * step).collect(),
        })
        .collect()
}
