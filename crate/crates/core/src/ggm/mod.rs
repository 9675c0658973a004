//! Direct precision-matrix estimators for Gaussian graphical models.

pub mod clime;
pub mod glasso;
pub mod lasso;
pub mod nodewise;
pub mod simplex;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use clime::{clime_estimate, clime_path, clime_solve, ClimeResult};
pub use glasso::{glasso_estimate, glasso_objective, glasso_path, glasso_solve, glasso_solve_from, GlassoResult, GLASSO_TOL};
pub use lasso::{lasso_solve, LassoProblem};
pub use nodewise::{
    greedy_prune_estimate, hybrid_mb_estimate, mb_estimate, standardized, support_and_refit, NeighborhoodSet,
};

use crate::error::{Error, Result};
use crate::types::{PrecisionEstimate, ReturnsMatrix};

pub const GGM_METHODS: [&str; 5] = ["glasso", "mb", "clime", "greedy", "hybridmb"];

/// Fixed prune factor used by HybridMB when only its ball radius is tuned.
pub const HYBRID_NU: f64 = 0.05;
pub const GREEDY_T_STEPS: usize = 20;

pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GgmMethod {
    Glasso,
    Mb,
    Clime,
    Greedy,
    HybridMb,
}

impl GgmMethod {
    pub fn name(self) -> &'static str {
        match self {
            GgmMethod::Glasso => "glasso",
            GgmMethod::Mb => "mb",
            GgmMethod::Clime => "clime",
            GgmMethod::Greedy => "greedy",
            GgmMethod::HybridMb => "hybridmb",
        }
    }

    /// Name of the sparsity-controlling parameter, and whether larger values
    /// give sparser estimates.
    pub fn sparsity_param(self) -> (&'static str, bool) {
        match self {
            GgmMethod::Glasso => ("rho", true),
            GgmMethod::Mb | GgmMethod::Clime => ("lambda", true),
            GgmMethod::Greedy => ("nu", true),
            // ball radius: a larger ball admits more neighbours
            GgmMethod::HybridMb => ("lambda", false),
        }
    }

    /// Continuous parameters searched by Nelder–Mead, with their open interval.
    pub fn continuous_params(self) -> Vec<(&'static str, f64, f64)> {
        match self {
            GgmMethod::Greedy => vec![("nu", 0.0, 1.0)],
            other => vec![(other.sparsity_param().0, 0.0, f64::INFINITY)],
        }
    }

    /// Default search grid.
    pub fn default_grid(self) -> Vec<Params> {
        let penalties = [0.01, 0.025, 0.05, 0.1, 0.2, 0.4];
        let one = |k: &str, v: f64| Params::from([(k.to_string(), v)]);
        match self {
            GgmMethod::Glasso => penalties.iter().map(|&v| one("rho", v)).collect(),
            GgmMethod::Mb | GgmMethod::Clime => penalties.iter().map(|&v| one("lambda", v)).collect(),
            GgmMethod::HybridMb => [0.05, 0.1, 0.2, 0.4, 0.8, 1.6]
                .iter()
                .map(|&v| Params::from([("lambda".to_string(), v), ("nu".to_string(), HYBRID_NU)]))
                .collect(),
            GgmMethod::Greedy => {
                let mut g = Vec::new();
                for t in [5.0, 10.0, 20.0] {
                    for nu in [0.01, 0.05, 0.1, 0.2] {
                        g.push(Params::from([("t_steps".to_string(), t), ("nu".to_string(), nu)]));
                    }
                }
                g
            }
        }
    }

    /// [`GgmMethod::fit`] at every grid point, in grid order. A CLIME grid that
    /// varies only `lambda` shares one warm-started path per column.
    pub fn fit_many(self, r: &ReturnsMatrix, grid: &[Params]) -> Vec<Result<PrecisionEstimate>> {
        let single = |name: &str| -> Option<Vec<f64>> {
            grid.iter().map(|p| if p.len() == 1 { p.get(name).copied() } else { None }).collect()
        };
        if self == GgmMethod::Glasso {
            if let Some(rhos) = single("rho").filter(|r| r.iter().all(|&v| v >= 0.0)) {
                return match standardized(r) {
                    Ok((corr, sd)) => glasso_path(&corr, &rhos, GLASSO_TOL)
                        .into_iter()
                        .map(|res| Ok(res?.estimate.unstandardize(&sd)))
                        .collect(),
                    Err(_) => grid.iter().map(|p| self.fit(r, p)).collect(),
                };
            }
        }
        match (self, single("lambda")) {
            (GgmMethod::Clime, Some(lambdas)) if lambdas.iter().all(|&l| l > 0.0) => {
                let path = standardized(r).and_then(|(corr, sd)| Ok((clime_path(&corr, &lambdas)?, sd)));
                match path {
                    Ok((path, sd)) => path.into_iter().map(|res| Ok(res.estimate.unstandardize(&sd))).collect(),
                    // per-point fits report their own errors
                    Err(_) => grid.iter().map(|p| self.fit(r, p)).collect(),
                }
            }
            _ => grid.par_iter().map(|p| self.fit(r, p)).collect(),
        }
    }

    /// Fits on a panel. Penalties act on the correlation scale; the estimate is
    /// returned on the scale of the data.
    pub fn fit(self, r: &ReturnsMatrix, params: &Params) -> Result<PrecisionEstimate> {
        let get = |k: &str| {
            params.get(k).copied().ok_or_else(|| Error::InvalidInput(format!("{} needs parameter '{k}'", self.name())))
        };
        match self {
            GgmMethod::Glasso => {
                let rho = get("rho")?;
                let (corr, sd) = standardized(r)?;
                let est = glasso_estimate(&corr, rho)?;
                Ok(est.unstandardize(&sd))
            }
            GgmMethod::Clime => {
                let lambda = get("lambda")?;
                let (corr, sd) = standardized(r)?;
                let est = clime_estimate(&corr, lambda)?;
                Ok(est.unstandardize(&sd))
            }
            GgmMethod::Mb => mb_estimate(r, get("lambda")?),
            GgmMethod::Greedy => {
                let t = params.get("t_steps").copied().unwrap_or(GREEDY_T_STEPS as f64);
                let t = (t.round() as usize).clamp(1, r.n_assets() - 1);
                greedy_prune_estimate(r, t, get("nu")?)
            }
            GgmMethod::HybridMb => {
                hybrid_mb_estimate(r, get("lambda")?, params.get("nu").copied().unwrap_or(HYBRID_NU))
            }
        }
    }
}

impl std::str::FromStr for GgmMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "glasso" => GgmMethod::Glasso,
            "mb" => GgmMethod::Mb,
            "clime" => GgmMethod::Clime,
            "greedy" => GgmMethod::Greedy,
            "hybridmb" => GgmMethod::HybridMb,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown precision method '{other}'; valid: {}",
                    GGM_METHODS.join(", ")
                )))
            }
        })
    }
}
