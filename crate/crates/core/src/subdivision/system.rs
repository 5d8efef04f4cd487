//! Exact underdetermined linear solves for stencil construction.
//!
//! Coefficient matrices are rational; right-hand sides are [`SymVal`]s (affine
//! in the irrational Loop weights β(n)), so solutions stay affine in the β's
//! and feasibility is decidable exactly. The solver keeps an incremental row
//! echelon form: rows are added one at a time, each either becoming a new
//! pivot, proving redundant, or flagging infeasibility. Support minimization
//! adds zero-constraints for whole distance classes of unknowns (farthest
//! first, all-or-nothing per class), and the leftover freedom is closed by the
//! exact minimum-norm solution, which is the canonical representative and
//! automatically respects every symmetry of the constraint set.

use num::{BigRational, One, Zero};

use crate::sparse::Rat;

use super::symval::SymVal;

/// Incremental exact row-echelon form of `C x = rhs`.
#[derive(Debug, Clone)]
pub struct Echelon {
    n: usize,
    /// Rows normalized to a unit leading coefficient; `pivot_col[i]` is the
    /// leading column of `rows[i]`. Kept in insertion order.
    rows: Vec<Vec<Rat>>,
    rhs: Vec<SymVal>,
    pivot_col: Vec<usize>,
    /// Column -> pivot row index, or usize::MAX.
    col_pivot: Vec<usize>,
}

/// Outcome of adding a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddRow {
    NewPivot,
    Redundant,
    Infeasible,
}

impl Echelon {
    pub fn new(n: usize) -> Self {
        Echelon {
            n,
            rows: Vec::new(),
            rhs: Vec::new(),
            pivot_col: Vec::new(),
            col_pivot: vec![usize::MAX; n],
        }
    }

    /// Reduces the row against the current pivots and either installs it as a
    /// new pivot or reports it redundant/infeasible. The echelon is unchanged
    /// unless `NewPivot` is returned, so greedy probing needs no rollback.
    pub fn add_row(&mut self, mut coeffs: Vec<Rat>, mut rhs: SymVal) -> AddRow {
        assert_eq!(coeffs.len(), self.n);
        for col in 0..self.n {
            if coeffs[col].is_zero() {
                continue;
            }
            let p = self.col_pivot[col];
            if p == usize::MAX {
                // Normalize and install.
                let lead = coeffs[col].clone();
                let inv = BigRational::one() / lead;
                for c in coeffs.iter_mut() {
                    *c *= inv.clone();
                }
                rhs = rhs.scale(&inv);
                self.col_pivot[col] = self.rows.len();
                self.pivot_col.push(col);
                self.rows.push(coeffs);
                self.rhs.push(rhs);
                return AddRow::NewPivot;
            }
            // Eliminate with the existing pivot row.
            let factor = coeffs[col].clone();
            let prow = self.rows[p].clone();
            for (c, pc) in coeffs.iter_mut().zip(&prow) {
                *c -= factor.clone() * pc.clone();
            }
            rhs = rhs.sub(&self.rhs[p].scale(&factor));
        }
        if rhs.is_zero() {
            AddRow::Redundant
        } else {
            AddRow::Infeasible
        }
    }

    /// Tries to force every listed unknown to zero; commits either all of the
    /// constraints or none.
    pub fn try_force_zero(&mut self, vars: &[usize]) -> bool {
        let snapshot = self.clone();
        for &v in vars {
            let mut row = vec![Rat::zero(); self.n];
            row[v] = Rat::one();
            if self.add_row(row, SymVal::zero()) == AddRow::Infeasible {
                *self = snapshot;
                return false;
            }
        }
        true
    }

    /// Value of the linear functional `⟨x, coeffs⟩` when the constraints
    /// already determine it (the functional lies in the row span), else None.
    pub fn functional_value(&self, coeffs: &[Rat]) -> Option<SymVal> {
        assert_eq!(coeffs.len(), self.n);
        let mut r = coeffs.to_vec();
        let mut val = SymVal::zero();
        for col in 0..self.n {
            if r[col].is_zero() {
                continue;
            }
            let p = self.col_pivot[col];
            if p == usize::MAX {
                return None;
            }
            let factor = r[col].clone();
            let prow = self.rows[p].clone();
            for (c, pc) in r.iter_mut().zip(&prow) {
                *c -= factor.clone() * pc.clone();
            }
            val = val.add(&self.rhs[p].scale(&factor));
        }
        Some(val)
    }

    /// Minimum-norm solution of the current system (exact, per symbolic
    /// component). Returns one value per unknown.
    pub fn solve_min_norm(&self) -> Vec<SymVal> {
        // Full reduction: express pivot variables in terms of free variables.
        // reduced[i] holds the row for pivot i with zeros in all pivot columns
        // except its own.
        let m = self.rows.len();
        let mut reduced = self.rows.clone();
        let mut rhs = self.rhs.clone();
        // Eliminate later pivots from earlier rows (rows were echelon in
        // insertion order, so later pivot columns may appear in earlier rows).
        for i in (0..m).rev() {
            for j in 0..m {
                if j == i {
                    continue;
                }
                let col = self.pivot_col[i];
                let factor = reduced[j][col].clone();
                if factor.is_zero() {
                    continue;
                }
                let prow = reduced[i].clone();
                for (c, pc) in reduced[j].iter_mut().zip(&prow) {
                    *c -= factor.clone() * pc.clone();
                }
                let delta = rhs[i].scale(&factor);
                rhs[j] = rhs[j].sub(&delta);
            }
        }
        let free: Vec<usize> = (0..self.n)
            .filter(|&c| self.col_pivot[c] == usize::MAX)
            .collect();
        if free.is_empty() {
            let mut x = vec![SymVal::zero(); self.n];
            for (i, &col) in self.pivot_col.iter().enumerate() {
                x[col] = rhs[i].clone();
            }
            return x;
        }
        // x = x_p + B z: x_p sets free vars to zero; column j of B has 1 at
        // free var j and -reduced[i][free_j] at pivot i's column.
        // Minimize ||x||^2 per symbolic component: (BᵀB) z = -Bᵀ x_p.
        let nf = free.len();
        let mut btb = vec![vec![Rat::zero(); nf]; nf];
        for (j1, &f1) in free.iter().enumerate() {
            for (j2, &f2) in free.iter().enumerate() {
                let mut s = if f1 == f2 { Rat::one() } else { Rat::zero() };
                for i in 0..m {
                    s += reduced[i][f1].clone() * reduced[i][f2].clone();
                }
                btb[j1][j2] = s;
            }
        }
        // Component keys present in the rhs.
        let keys = {
            let mut ks: Vec<usize> = Vec::new();
            for r in &rhs {
                for k in r.component_keys() {
                    if !ks.contains(&k) {
                        ks.push(k);
                    }
                }
            }
            ks.sort_unstable();
            ks
        };
        let mut z = vec![SymVal::zero(); nf];
        for key in keys {
            // -Bᵀ x_p for this component: x_p at pivot col i is rhs_i.
            let mut b = vec![Rat::zero(); nf];
            for (j, &f) in free.iter().enumerate() {
                let mut s = Rat::zero();
                for i in 0..m {
                    // B[pivot_col i][j] = -reduced[i][f]
                    s += reduced[i][f].clone() * rhs[i].component(key);
                }
                b[j] = s; // -Bᵀ x_p = +Σ reduced·rhs
            }
            let zc = solve_spd_exact(&btb, &b);
            for (j, v) in zc.into_iter().enumerate() {
                z[j] = z[j].add(&SymVal::component_term(key, v));
            }
        }
        let mut x = vec![SymVal::zero(); self.n];
        for (j, &f) in free.iter().enumerate() {
            x[f] = z[j].clone();
        }
        for (i, &col) in self.pivot_col.iter().enumerate() {
            let mut v = rhs[i].clone();
            for (j, &f) in free.iter().enumerate() {
                v = v.sub(&z[j].scale(&reduced[i][f]));
            }
            x[col] = v;
        }
        x
    }
}

/// Exact dense symmetric positive semidefinite solve by Gaussian elimination
/// without pivoting; None when a pivot vanishes (singular Gram matrix).
pub fn solve_spd(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let n = b.len();
    let mut m: Vec<Vec<Rat>> = a.to_vec();
    let mut r = b.to_vec();
    for col in 0..n {
        let piv = m[col][col].clone();
        if piv.is_zero() {
            return None;
        }
        for row in col + 1..n {
            let factor = m[row][col].clone() / piv.clone();
            if factor.is_zero() {
                continue;
            }
            let src = m[col].clone();
            for (dst, s) in m[row].iter_mut().zip(&src) {
                *dst -= factor.clone() * s.clone();
            }
            let delta = factor * r[col].clone();
            r[row] -= delta;
        }
    }
    let mut x = vec![Rat::zero(); n];
    for col in (0..n).rev() {
        let mut s = r[col].clone();
        for j in col + 1..n {
            s -= m[col][j].clone() * x[j].clone();
        }
        x[col] = s / m[col][col].clone();
    }
    Some(x)
}

/// Exact dense SPD solve by Gaussian elimination without pivoting (the matrix
/// is positive definite by construction).
fn solve_spd_exact(a: &[Vec<Rat>], b: &[Rat]) -> Vec<Rat> {
    let n = b.len();
    let mut m: Vec<Vec<Rat>> = a.to_vec();
    let mut r = b.to_vec();
    for col in 0..n {
        let piv = m[col][col].clone();
        assert!(!piv.is_zero(), "SPD matrix has nonzero diagonal pivots");
        for row in col + 1..n {
            let factor = m[row][col].clone() / piv.clone();
            if factor.is_zero() {
                continue;
            }
            let src = m[col].clone();
            for (dst, s) in m[row].iter_mut().zip(&src) {
                *dst -= factor.clone() * s.clone();
            }
            let delta = factor * r[col].clone();
            r[row] -= delta;
        }
    }
    let mut x = vec![Rat::zero(); n];
    for col in (0..n).rev() {
        let mut s = r[col].clone();
        for j in col + 1..n {
            s -= m[col][j].clone() * x[j].clone();
        }
        x[col] = s / m[col][col].clone();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::FromPrimitive;

    fn rat(p: i64, q: i64) -> Rat {
        BigRational::new(p.into(), q.into())
    }

    #[test]
    fn echelon_detects_infeasibility() {
        let mut e = Echelon::new(2);
        assert_eq!(
            e.add_row(vec![rat(1, 1), rat(1, 1)], SymVal::from_ratio(1, 1)),
            AddRow::NewPivot
        );
        assert_eq!(
            e.add_row(vec![rat(2, 1), rat(2, 1)], SymVal::from_ratio(2, 1)),
            AddRow::Redundant
        );
        assert_eq!(
            e.add_row(vec![rat(1, 1), rat(1, 1)], SymVal::from_ratio(3, 1)),
            AddRow::Infeasible
        );
    }

    #[test]
    fn min_norm_splits_evenly() {
        // x + y = 1 has min-norm solution (1/2, 1/2).
        let mut e = Echelon::new(2);
        e.add_row(vec![rat(1, 1), rat(1, 1)], SymVal::from_ratio(1, 1));
        let x = e.solve_min_norm();
        assert_eq!(x[0], SymVal::from_ratio(1, 2));
        assert_eq!(x[1], SymVal::from_ratio(1, 2));
    }

    #[test]
    fn forcing_preserves_feasibility_checks() {
        // x + y + z = 1; forcing y,z feasible; then forcing x infeasible.
        let mut e = Echelon::new(3);
        e.add_row(
            vec![rat(1, 1), rat(1, 1), rat(1, 1)],
            SymVal::from_ratio(1, 1),
        );
        assert!(e.try_force_zero(&[1, 2]));
        assert!(!e.try_force_zero(&[0]));
        let x = e.solve_min_norm();
        assert_eq!(x[0], SymVal::from_ratio(1, 1));
        assert!(x[1].is_zero() && x[2].is_zero());
        let _ = Rat::from_i64(1);
    }
}
