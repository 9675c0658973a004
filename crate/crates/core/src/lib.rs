//! Covariance and precision-matrix estimation for asset returns, global
//! minimum-variance backtests and bootstrap model comparison.

pub mod compare;
pub mod cov;
pub mod diagnostics;
pub mod error;
pub mod ggm;
pub mod ingest;
pub mod linalg;
pub mod portfolio;
pub mod synthetic;
pub mod tuning;
pub mod types;

pub use error::{Error, ErrorClass, Result};
pub use types::{CovarianceEstimate, PrecisionEstimate, ReturnsMatrix};
