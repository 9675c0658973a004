//! Dense two-phase primal simplex for `min cᵀx` s.t. `Ax ≤ b`, `x ≥ 0`.
//! Dantzig pricing, switching to Bland's rule during long runs of degenerate
//! pivots so that it cannot cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
/// Consecutive degenerate pivots tolerated before falling back to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    /// row-major, `rows × cols`; rows 0..m are constraints, the last column is the right-hand side
    t: Vec<f64>,
    cols: usize,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.cols + c]
    }

    fn rhs_col(&self) -> usize {
        self.cols - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let cols = self.cols;
        let rows = self.t.len() / cols;
        let piv = self.at(row, col);
        let prow: Vec<f64> = self.t[row * cols..(row + 1) * cols].iter().map(|v| v / piv).collect();
        let nz: Vec<usize> = (0..cols).filter(|&c| prow[c] != 0.0).collect();
        for r in 0..rows {
            let base = r * cols;
            if r == row {
                self.t[base..base + cols].copy_from_slice(&prow);
                continue;
            }
            let f = self.t[base + col];
            if f != 0.0 {
                let dst = &mut self.t[base..base + cols];
                for &c in &nz {
                    dst[c] -= f * prow[c];
                }
                dst[col] = 0.0;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Minimizes the objective stored in row `obj` using columns `< allowed`.
    fn run(&mut self, obj: usize, allowed: usize, m: usize) -> Result<()> {
        let rhs = self.rhs_col();
        let mut streak = 0;
        loop {
            if self.pivots > self.max_pivots {
                return Err(Error::SolverStall { pivots: self.pivots });
            }
            let entering = if streak < DEGENERATE_STREAK {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..allowed {
                    let d = self.at(obj, c);
                    if d < -PIVOT_TOL && best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((c, d));
                    }
                }
                best.map(|(c, _)| c)
            } else {
                (0..allowed).find(|&c| self.at(obj, c) < -PIVOT_TOL)
            };
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.at(r, col);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, rhs) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, ratio)) => {
                    streak = if ratio.abs() <= 1e-12 { streak + 1 } else { 0 };
                    self.pivot(r, col)
                }
                None => return Err(Error::Infeasible),
            }
        }
    }
}

/// Solves the LP. An unbounded objective is reported as [`Error::Infeasible`].
pub fn solve(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpSolution> {
    let (m, n) = a.shape();
    let negatives: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negatives.len();
    // columns: x (n) | slack (m) | artificial (n_art) | rhs
    let cols = n + m + n_art + 1;
    let rhs = cols - 1;
    // two extra rows: phase-2 objective, phase-1 objective
    let mut t = vec![0.0; (m + 2) * cols];
    let mut basis = vec![0; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * cols + j] = sign * a[(i, j)];
        }
        t[i * cols + n + i] = sign;
        t[i * cols + rhs] = sign * b[i];
        if b[i] < 0.0 {
            t[i * cols + n + m + art] = 1.0;
            basis[i] = n + m + art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    for j in 0..n {
        t[m * cols + j] = c[j];
    }
    let obj2 = m;
    let obj1 = m + 1;
    // phase-1 objective = Σ artificials, expressed in non-basic columns
    for &i in &negatives {
        for col in 0..cols {
            if col < n + m || col == rhs {
                t[obj1 * cols + col] -= t[i * cols + col];
            }
        }
    }
    let mut tab = Tableau { t, cols, basis, pivots: 0, max_pivots: 50 * (m + n + n_art) + 1000 };
    if n_art > 0 {
        tab.run(obj1, n + m, m)?;
        if -tab.at(obj1, rhs) > 1e-9 * (1.0 + b.amax()) {
            return Err(Error::Infeasible);
        }
        // drive any artificial left in the basis at zero level out of it
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(col) = (0..n + m).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                    tab.pivot(r, col);
                }
            }
        }
    }
    tab.run(obj2, n + m, m)?;
    let mut x = DVector::zeros(n);
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.at(r, rhs).max(0.0);
        }
    }
    refine(&mut x, &tab.basis, a, b, n);
    let objective = c.dot(&x);
    Ok(LpSolution { x, objective, pivots: tab.pivots })
}

impl Tableau {
    /// Dual simplex from a dual-feasible basis: drives negative right-hand
    /// sides out, most negative first, Bland's rule during degenerate runs.
    fn run_dual(&mut self, obj: usize, allowed: usize, m: usize, tol: f64) -> Result<()> {
        let rhs = self.rhs_col();
        let mut streak = 0;
        loop {
            if self.pivots > self.max_pivots {
                return Err(Error::SolverStall { pivots: self.pivots });
            }
            let leaving = if streak < DEGENERATE_STREAK {
                let mut best: Option<(usize, f64)> = None;
                for r in 0..m {
                    let v = self.at(r, rhs);
                    if v < -tol && best.is_none_or(|(_, bv)| v < bv) {
                        best = Some((r, v));
                    }
                }
                best.map(|(r, _)| r)
            } else {
                (0..m).filter(|&r| self.at(r, rhs) < -tol).min_by_key(|&r| self.basis[r])
            };
            let Some(row) = leaving else {
                return Ok(());
            };
            let mut enter: Option<(usize, f64)> = None;
            for c in 0..allowed {
                let a = self.at(row, c);
                if a < -PIVOT_TOL {
                    let ratio = self.at(obj, c).max(0.0) / -a;
                    if enter.is_none_or(|(_, br)| ratio < br - 1e-12) {
                        enter = Some((c, ratio));
                    }
                }
            }
            match enter {
                Some((col, ratio)) => {
                    streak = if ratio <= 1e-12 { streak + 1 } else { 0 };
                    self.pivot(row, col);
                }
                None => return Err(Error::Infeasible),
            }
        }
    }

    /// Replaces the right-hand side by `B⁻¹b`, read off the slack columns.
    fn reset_rhs(&mut self, b: &DVector<f64>, n: usize, m: usize) {
        let rhs = self.rhs_col();
        let rows = self.t.len() / self.cols;
        for r in 0..rows {
            let v: f64 = (0..m).map(|i| self.at(r, n + i) * b[i]).sum();
            self.t[r * self.cols + rhs] = v;
        }
    }
}

/// Solves `min cᵀx` s.t. `Ax ≤ b`, `x ≥ 0` for each right-hand side in turn
/// with the dual simplex, starting from the slack basis (dual feasible since
/// `c ≥ 0`) and warm-starting every solve from the previous optimal basis.
pub fn solve_dual_sequence(c: &DVector<f64>, a: &DMatrix<f64>, bs: &[DVector<f64>]) -> Result<Vec<LpSolution>> {
    let (m, n) = a.shape();
    if c.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("dual simplex needs non-negative costs".into()));
    }
    let cols = n + m + 1;
    let mut t = vec![0.0; (m + 1) * cols];
    for i in 0..m {
        for j in 0..n {
            t[i * cols + j] = a[(i, j)];
        }
        t[i * cols + n + i] = 1.0;
    }
    for j in 0..n {
        t[m * cols + j] = c[j];
    }
    let mut tab = Tableau { t, cols, basis: (n..n + m).collect(), pivots: 0, max_pivots: 50 * (m + n) + 1000 };
    let mut out = Vec::with_capacity(bs.len());
    for b in bs {
        if b.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: b.len() });
        }
        tab.reset_rhs(b, n, m);
        let start = tab.pivots;
        tab.run_dual(m, n + m, m, 1e-12 * (1.0 + b.amax()))?;
        let mut x = DVector::zeros(n);
        for r in 0..m {
            if tab.basis[r] < n {
                x[tab.basis[r]] = tab.at(r, cols - 1).max(0.0);
            }
        }
        refine(&mut x, &tab.basis, a, b, n);
        let objective = c.dot(&x);
        out.push(LpSolution { x, objective, pivots: tab.pivots - start });
    }
    Ok(out)
}

/// Recomputes the basic solution from the original data to shed the
/// round-off the tableau has accumulated. Basic slacks pin their rows, so
/// only the square system of basic structurals on the remaining rows is solved.
fn refine(x: &mut DVector<f64>, basis: &[usize], a: &DMatrix<f64>, b: &DVector<f64>, n: usize) {
    let m = a.nrows();
    let mut covered = vec![false; m];
    let mut structural = Vec::new();
    for &col in basis {
        if col < n {
            structural.push(col);
        } else if col < n + m {
            covered[col - n] = true;
        } else {
            return;
        }
    }
    let rows: Vec<usize> = (0..m).filter(|&r| !covered[r]).collect();
    if rows.len() != structural.len() {
        return;
    }
    let mut refined = DVector::zeros(n);
    if !structural.is_empty() {
        let k = structural.len();
        let bm = DMatrix::from_fn(k, k, |i, j| a[(rows[i], structural[j])]);
        let rhs = DVector::from_fn(k, |i, _| b[rows[i]]);
        let Some(sol) = bm.lu().solve(&rhs) else { return };
        for (k, &col) in structural.iter().enumerate() {
            if sol[k] < -1e-9 {
                return;
            }
            refined[col] = sol[k].max(0.0);
        }
    }
    *x = refined;
}
