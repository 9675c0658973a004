//! Dense symmetric linear algebra: SPD solves, spectral decomposition and
//! the small helpers every estimator leans on.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Residual tolerance for SPD solves.
pub const SOLVE_TOL: f64 = 1e-8;

const EIGEN_MAX_ITER: usize = 10_000;

/// Solution of an SPD system together with a cheap conditioning estimate.
#[derive(Debug, Clone)]
pub struct SpdSolveReport {
    pub solution: DMatrix<f64>,
    /// `(max Lᵢᵢ / min Lᵢᵢ)²` from the Cholesky factor; a lower bound on κ₂(A).
    pub condition_estimate: f64,
}

/// Eigen-decomposition `A = V diag(values) Vᵀ` with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn rebuild_with(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.rebuild_with(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Solves `A X = B` for symmetric positive-definite `A` by Cholesky factorization.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SpdSolveReport> {
    if !a.is_square() {
        return Err(Error::InvalidInput("solve_spd: matrix is not square".into()));
    }
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: b.nrows() });
    }
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::InvalidInput("solve_spd: matrix is not symmetric".into()));
    }
    let chol = symmetrize(a).cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let diag = (0..a.nrows()).map(|i| l[(i, i)]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || !lo.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    let solution = chol.solve(b);
    Ok(SpdSolveReport { solution, condition_estimate: (hi / lo).powi(2).max(1.0) })
}

/// Convenience wrapper for a single right-hand side.
pub fn solve_spd_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let rep = solve_spd(a, &rhs)?;
    Ok(rep.solution.column(0).into_owned())
}

/// Symmetric eigen-decomposition, eigenvalues descending.
pub fn spectral_decompose(a: &DMatrix<f64>) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(Error::InvalidInput("spectral_decompose: matrix is not square".into()));
    }
    let eig = SymmetricEigen::try_new(symmetrize(a), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::NonConvergence { what: "symmetric eigen-solver", iterations: EIGEN_MAX_ITER })?;
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum { values, vectors })
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    Ok(spectral_decompose(a)?.min())
}

/// Clips the spectrum from below at `floor_ratio · λ_max` and rebuilds.
/// Returns the repaired matrix and whether any eigenvalue was raised.
pub fn clip_spectrum(a: &DMatrix<f64>, floor_ratio: f64) -> Result<(DMatrix<f64>, bool)> {
    let spec = spectral_decompose(a)?;
    let floor = floor_ratio * spec.max().max(0.0);
    if spec.min() >= floor {
        return Ok((a.clone(), false));
    }
    let clipped = spec.values.map(|v| v.max(floor));
    Ok((spec.rebuild_with(&clipped), true))
}

/// Column means.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let t = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / t))
}

/// Subtracts column means.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(x);
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c
}

/// `(1/T) XcᵀXc` with `Xc` the column-centered data.
pub fn scatter(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xc = center_columns(x);
    let t = x.nrows() as f64;
    symmetrize(&(xc.tr_mul(&xc) / t))
}

/// Correlation matrix and standard deviations of a covariance matrix.
/// Zero-variance coordinates keep a unit diagonal and zero correlations.
pub fn correlation_from_cov(cov: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let p = cov.nrows();
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let mut r = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..p {
            r[(i, j)] = if i == j {
                1.0
            } else if sd[i] > 0.0 && sd[j] > 0.0 {
                cov[(i, j)] / (sd[i] * sd[j])
            } else {
                0.0
            };
        }
    }
    (r, sd)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
