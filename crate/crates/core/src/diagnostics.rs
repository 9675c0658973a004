//! Precision-matrix reports: distance to walk-summability, condition number
//! and sparsity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{frobenius, spectral_decompose, symmetrize};
use crate::tuning::TuneResult;
use crate::types::PrecisionEstimate;

pub const WS_TOL: f64 = 1e-10;
pub const WS_MAX_ITER: usize = 1_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionDiagnostics {
    pub method: String,
    pub cv_error: f64,
    pub nonzeros: usize,
    pub condition_number: f64,
    pub delta_ws: f64,
}

/// Diagonal kept, off-diagonal entries replaced by `−|·|`.
pub fn sign_flipped(theta: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| if i == j { theta[(i, j)] } else { -theta[(i, j)].abs() })
}

fn project_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spec = spectral_decompose(m)?;
    Ok(symmetrize(&spec.rebuild_with(&spec.values.map(|v| v.max(0.0)))))
}

fn project_nonpositive_offdiag(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if i == j { m[(i, j)] } else { m[(i, j)].min(0.0) })
}

/// `‖Θ̃ − Θ̂‖_F / ‖Θ̂‖_F` where Θ̃ is the closest matrix whose sign-flipped
/// version is positive semidefinite. Zero when the flipped matrix already is.
/// Otherwise Dykstra's alternating projection between the PSD cone and the
/// matrices with non-positive off-diagonal entries, run on the flipped matrix
/// (sign pattern restored afterwards, which does not change the distance).
pub fn walk_summability_delta(theta: &DMatrix<f64>) -> Result<f64> {
    let f = sign_flipped(&symmetrize(theta));
    let norm = frobenius(&f);
    if norm == 0.0 {
        return Ok(0.0);
    }
    if spectral_decompose(&f)?.min() >= -WS_TOL {
        return Ok(0.0);
    }
    let mut x = f.clone();
    let mut p = DMatrix::zeros(f.nrows(), f.ncols());
    let mut q = p.clone();
    for _ in 0..WS_MAX_ITER {
        let y = project_psd(&(&x + &p))?;
        p = &x + &p - &y;
        let next = project_nonpositive_offdiag(&(&y + &q));
        q = &y + &q - &next;
        let moved = frobenius(&(&next - &x));
        x = next;
        if moved <= WS_TOL * norm && frobenius(&(&x - &y)) <= WS_TOL.sqrt() * norm {
            return Ok(frobenius(&(&x - &f)) / norm);
        }
    }
    Err(Error::NonConvergence { what: "walk-summability projection", iterations: WS_MAX_ITER })
}

/// `λ_max / λ_min`; `∞` when the matrix is not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let spec = spectral_decompose(&symmetrize(m))?;
    let (hi, lo) = (spec.max(), spec.min());
    Ok(if lo <= 0.0 { f64::INFINITY } else { hi / lo })
}

/// Entries (diagonal included) with magnitude above `tol`.
pub fn nonzero_count(m: &DMatrix<f64>, tol: f64) -> usize {
    m.iter().filter(|v| v.abs() > tol).count()
}

pub fn summarize_precision(est: &PrecisionEstimate, tuning: &TuneResult) -> Result<PrecisionDiagnostics> {
    Ok(PrecisionDiagnostics {
        method: est.method.clone(),
        cv_error: tuning.best_score,
        nonzeros: nonzero_count(&est.matrix, 0.0),
        condition_number: condition_number(&est.matrix)?,
        delta_ws: walk_summability_delta(&est.matrix)?,
    })
}

/// Delimited table with columns `Method, CV Error, Non-zeros, Condition No., Delta WS`.
pub fn diagnostics_table(rows: &[PrecisionDiagnostics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Method", "CV Error", "Non-zeros", "Condition No.", "Delta WS"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            format!("{:.6e}", r.cv_error),
            r.nonzeros.to_string(),
            format!("{:.4e}", r.condition_number),
            format!("{:.3e}", r.delta_ws),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("ascii output"))
}
