//! Dense two-phase primal simplex for the micro LPs the oracle solves.
//!
//! Standard form: minimize cᵀx subject to Ax = b, x ≥ 0. Bland's rule on
//! both the entering and leaving choices guarantees termination under
//! degeneracy. The guard sizes (≤ 2000 columns) make a full dense tableau
//! the simplest correct choice; no factorization updates are needed.
//!
//! Dual multipliers are read off the final tableau: the reduced cost of the
//! artificial column for row i is −y_i, because that column is e_i with zero
//! phase-2 cost. Redundant rows keep their artificial basic at level zero,
//! which pins the corresponding dual to 0 — a harmless gauge choice.

use crate::{Error, Result};

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    /// Primal solution over the original (non-artificial) columns.
    pub x: Vec<f64>,
    /// One dual multiplier per constraint row, for the rows as given
    /// (before any internal sign normalization).
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    /// Farkas certificate y with Aᵀy ≤ 0 componentwise and bᵀy > 0,
    /// witnessing that Ax = b, x ≥ 0 has no solution.
    Infeasible { certificate: Vec<f64> },
}

struct Tableau {
    /// m rows × (n_total + 1) columns; last column is the rhs.
    rows: Vec<Vec<f64>>,
    /// Reduced-cost row, length n_total + 1; last entry is −objective.
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_real: usize,
    n_total: usize,
    /// Sign applied to each input row to make b ≥ 0.
    row_sign: Vec<f64>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        for v in &mut self.rows[row] {
            *v /= piv;
        }
        for r in 0..self.rows.len() {
            if r == row {
                continue;
            }
            let factor = self.rows[r][col];
            if factor != 0.0 {
                for j in 0..=self.n_total {
                    self.rows[r][j] -= factor * self.rows[row][j];
                }
            }
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            for j in 0..=self.n_total {
                self.obj[j] -= factor * self.rows[row][j];
            }
        }
        self.basis[row] = col;
    }

    /// Runs the simplex loop to optimality with Bland's rule; `allowed`
    /// filters which columns may enter.
    fn optimize(&mut self, allowed: impl Fn(usize) -> bool) -> Result<()> {
        let m = self.rows.len();
        // Bland's rule needs at most C(n, m) pivots; the generous cap only
        // guards against an implementation bug turning into a hang.
        let max_pivots = 200_000usize;
        for _ in 0..max_pivots {
            let entering = (0..self.n_total)
                .find(|&j| allowed(j) && self.obj[j] < -FEAS_TOL);
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..m {
                let a = self.rows[r][col];
                if a > FEAS_TOL {
                    let ratio = self.rows[r][self.n_total] / a;
                    let better = ratio < best_ratio - 1e-15
                        || (ratio < best_ratio + 1e-15
                            && leave.map_or(true, |l| self.basis[r] < self.basis[l]));
                    if better {
                        best_ratio = ratio;
                        leave = Some(r);
                    }
                }
            }
            let Some(row) = leave else {
                return Err(Error::Numerical(
                    "LP is unbounded below; the oracle model should not permit this".into(),
                ));
            };
            self.pivot(row, col);
        }
        Err(Error::Numerical(format!(
            "simplex exceeded {max_pivots} pivots without reaching optimality"
        )))
    }

    /// Dual multipliers in the caller's row orientation. The reduced cost of
    /// artificial column i is (its cost in the current phase) − y_i, so y_i
    /// is recovered as `art_cost − obj[n+i]`, undone by the row sign flip.
    fn duals(&self, art_cost: f64) -> Vec<f64> {
        (0..self.rows.len())
            .map(|i| (art_cost - self.obj[self.n_real + i]) * self.row_sign[i])
            .collect()
    }
}

/// Solves min cᵀx, Ax = b, x ≥ 0 and returns the optimum with exact-basis
/// duals, or a Farkas infeasibility certificate.
pub fn solve(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpOutcome> {
    let m = a.len();
    if b.len() != m {
        return Err(Error::Structural(format!(
            "LP has {m} constraint rows but {} right-hand sides",
            b.len()
        )));
    }
    let n = c.len();
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Structural(format!(
                "LP row {i} has {} coefficients, expected {n}",
                row.len()
            )));
        }
    }
    let n_total = n + m;
    let mut rows = Vec::with_capacity(m);
    let mut row_sign = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        row_sign.push(sign);
        let mut row = vec![0.0; n_total + 1];
        for j in 0..n {
            row[j] = sign * a[i][j];
        }
        row[n + i] = 1.0;
        row[n_total] = sign * b[i];
        rows.push(row);
    }
    // Phase-1 reduced costs under the all-artificial basis.
    let mut obj = vec![0.0; n_total + 1];
    for j in 0..n {
        obj[j] = -rows.iter().map(|r| r[j]).sum::<f64>();
    }
    obj[n_total] = -rows.iter().map(|r| r[n_total]).sum::<f64>();
    let mut tab = Tableau {
        rows,
        obj,
        basis: (n..n_total).collect(),
        n_real: n,
        n_total,
        row_sign,
    };
    tab.optimize(|_| true)?;
    let phase1 = -tab.obj[n_total];
    if phase1 > FEAS_TOL * (1.0 + b.iter().map(|v| v.abs()).sum::<f64>()) {
        return Ok(LpOutcome::Infeasible { certificate: tab.duals(1.0) });
    }

    // Drive basic artificials (at level zero) out of the basis so phase-2
    // pivots cannot lift them back above zero. A basic column has a zero
    // entry in every other row, so any |entry| > tol here is nonbasic; if no
    // real column qualifies, the row is redundant and its artificial stays
    // pinned at zero (its dual becomes the gauge choice 0).
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| tab.rows[r][j].abs() > FEAS_TOL) {
                tab.pivot(r, col);
            }
        }
    }

    // Phase 2: rebuild reduced costs from the real objective; artificial
    // columns may stay basic at zero but must never re-enter.
    let mut obj = vec![0.0; n_total + 1];
    obj[..n].copy_from_slice(c);
    for (r, &bv) in tab.basis.iter().enumerate() {
        let cost = if bv < n { c[bv] } else { 0.0 };
        if cost != 0.0 {
            for j in 0..=n_total {
                obj[j] -= cost * tab.rows[r][j];
            }
        }
    }
    tab.obj = obj;
    let n_real = n;
    tab.optimize(|j| j < n_real)?;

    let mut x = vec![0.0; n];
    for (r, &bv) in tab.basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab.rows[r][n_total];
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
    Ok(LpOutcome::Optimal(LpSolution { objective, x, duals: tab.duals(0.0) }))
}
