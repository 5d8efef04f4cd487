//! Sparse-matrix helpers shared across the crate.
//!
//! Float matrices are `nalgebra_sparse::CsrMatrix<f64>`. The product and
//! triple-product routines here are row-parallel (Gustavson row merge) when the
//! `parallel` feature is enabled; every output row is computed independently,
//! so results are bitwise identical to the sequential path.
//!
//! Exact matrices ([`SpMat`]) are a minimal generic CSR over a commutative
//! ring, used with `i64` incidence entries and `BigRational` subdivision
//! weights where checks must be exact rather than within a float tolerance.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num::{BigRational, FromPrimitive, ToPrimitive, Zero};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Exact rational scalar used for stencil weights and exact checks.
pub type Rat = BigRational;

/// Builds a CSR matrix from triplets, summing duplicates in sorted order so the
/// accumulation order (and hence float rounding) is independent of the order in
/// which triplets were produced.
pub fn csr_from_triplets(
    nrows: usize,
    ncols: usize,
    mut triplets: Vec<(usize, usize, f64)>,
) -> CsrMatrix<f64> {
    triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
    let mut coo = CooMatrix::new(nrows, ncols);
    let mut i = 0;
    while i < triplets.len() {
        let (r, c, _) = triplets[i];
        let mut v = 0.0;
        while i < triplets.len() && triplets[i].0 == r && triplets[i].1 == c {
            v += triplets[i].2;
            i += 1;
        }
        if v != 0.0 {
            coo.push(r, c, v);
        }
    }
    CsrMatrix::from(&coo)
}

/// Identity matrix in CSR form.
pub fn csr_identity(n: usize) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n, n);
    for i in 0..n {
        coo.push(i, i, 1.0);
    }
    CsrMatrix::from(&coo)
}

fn spgemm_row(
    a_cols: &[usize],
    a_vals: &[f64],
    b: &CsrMatrix<f64>,
    marker: &mut [usize],
    acc: &mut [f64],
    stamp: usize,
) -> (Vec<usize>, Vec<f64>) {
    let mut cols: Vec<usize> = Vec::new();
    for (&ac, &av) in a_cols.iter().zip(a_vals) {
        let brow = b.get_row(ac).expect("row in range");
        for (&bc, &bv) in brow.col_indices().iter().zip(brow.values()) {
            if marker[bc] != stamp {
                marker[bc] = stamp;
                acc[bc] = 0.0;
                cols.push(bc);
            }
            acc[bc] += av * bv;
        }
    }
    cols.sort_unstable();
    let vals = cols.iter().map(|&c| acc[c]).collect();
    (cols, vals)
}

/// Sparse-sparse product `a * b` (sequential Gustavson).
pub fn spgemm_seq(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions must agree");
    let mut marker = vec![usize::MAX; b.ncols()];
    let mut acc = vec![0.0; b.ncols()];
    let mut indptr = Vec::with_capacity(a.nrows() + 1);
    indptr.push(0usize);
    let mut cols_all = Vec::new();
    let mut vals_all = Vec::new();
    for (stamp, row) in a.row_iter().enumerate() {
        let (cols, vals) = spgemm_row(
            row.col_indices(),
            row.values(),
            b,
            &mut marker,
            &mut acc,
            stamp,
        );
        cols_all.extend_from_slice(&cols);
        vals_all.extend_from_slice(&vals);
        indptr.push(cols_all.len());
    }
    CsrMatrix::try_from_csr_data(a.nrows(), b.ncols(), indptr, cols_all, vals_all)
        .expect("valid CSR data")
}

/// Sparse-sparse product `a * b`; row-parallel when the `parallel` feature is
/// on, bitwise identical to [`spgemm_seq`].
pub fn spgemm(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    #[cfg(feature = "parallel")]
    {
        assert_eq!(a.ncols(), b.nrows(), "inner dimensions must agree");
        let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..a.nrows())
            .into_par_iter()
            .map_init(
                || (vec![usize::MAX; b.ncols()], vec![0.0; b.ncols()], 0usize),
                |(marker, acc, stamp), i| {
                    let row = a.get_row(i).expect("row in range");
                    *stamp += 1;
                    spgemm_row(row.col_indices(), row.values(), b, marker, acc, *stamp - 1)
                },
            )
            .collect();
        let mut indptr = Vec::with_capacity(a.nrows() + 1);
        indptr.push(0usize);
        let mut cols_all = Vec::new();
        let mut vals_all = Vec::new();
        for (cols, vals) in rows {
            cols_all.extend_from_slice(&cols);
            vals_all.extend_from_slice(&vals);
            indptr.push(cols_all.len());
        }
        CsrMatrix::try_from_csr_data(a.nrows(), b.ncols(), indptr, cols_all, vals_all)
            .expect("valid CSR data")
    }
    #[cfg(not(feature = "parallel"))]
    {
        spgemm_seq(a, b)
    }
}

/// Congruence (triple) product `Aᵀ X A`.
pub fn congruence(a: &CsrMatrix<f64>, x: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    let at = a.transpose();
    spgemm(&spgemm(&at, x), a)
}

/// Linear combination `alpha·a + beta·b` by sorted row merge.
pub fn csr_add(alpha: f64, a: &CsrMatrix<f64>, beta: f64, b: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut triplets = Vec::with_capacity(a.nnz() + b.nnz());
    for (r, c, v) in a.triplet_iter() {
        triplets.push((r, c, alpha * v));
    }
    for (r, c, v) in b.triplet_iter() {
        triplets.push((r, c, beta * v));
    }
    csr_from_triplets(a.nrows(), a.ncols(), triplets)
}

/// Matrix-vector product `y = A x` (sequential; used inside solvers).
pub fn matvec(a: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    assert_eq!(a.ncols(), x.len());
    assert_eq!(a.nrows(), y.len());
    for (i, row) in a.row_iter().enumerate() {
        let mut s = 0.0;
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[c];
        }
        y[i] = s;
    }
}

/// Largest absolute entry.
pub fn max_abs(a: &CsrMatrix<f64>) -> f64 {
    a.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> f64 {
    max_abs(&csr_add(1.0, a, -1.0, b))
}

/// Submatrix with the given rows and columns, reindexed in the given order.
pub fn select(a: &CsrMatrix<f64>, rows: &[usize], cols: &[usize]) -> CsrMatrix<f64> {
    let mut col_map = vec![usize::MAX; a.ncols()];
    for (new, &old) in cols.iter().enumerate() {
        col_map[old] = new;
    }
    let mut triplets = Vec::new();
    for (new_r, &old_r) in rows.iter().enumerate() {
        let row = a.get_row(old_r).expect("row in range");
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if col_map[c] != usize::MAX {
                triplets.push((new_r, col_map[c], v));
            }
        }
    }
    csr_from_triplets(rows.len(), cols.len(), triplets)
}

/// Dense copy of a sparse matrix.
pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.triplet_iter() {
        d[(r, c)] = *v;
    }
    d
}

/// Rank by Gaussian elimination with column pivoting; entries below
/// `1e-10 · (largest initial column norm)` are treated as zero.
pub fn dense_rank(m: &DMatrix<f64>) -> usize {
    let mut a = m.clone();
    let max_col_norm = (0..a.ncols())
        .map(|j| a.column(j).norm())
        .fold(0.0f64, f64::max);
    if max_col_norm == 0.0 {
        return 0;
    }
    let tol = 1e-10 * max_col_norm;
    let (nr, nc) = (a.nrows(), a.ncols());
    let mut rank = 0;
    let mut row = 0;
    for col in 0..nc {
        if row >= nr {
            break;
        }
        let (pivot_row, pivot_abs) = (row..nr)
            .map(|r| (r, a[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("nonempty range");
        if pivot_abs <= tol {
            continue;
        }
        a.swap_rows(row, pivot_row);
        let piv = a[(row, col)];
        for r in row + 1..nr {
            let factor = a[(r, col)] / piv;
            if factor != 0.0 {
                for c in col..nc {
                    let delta = factor * a[(row, c)];
                    a[(r, c)] -= delta;
                }
            }
        }
        rank += 1;
        row += 1;
    }
    rank
}

/// Ring requirements for exact sparse arithmetic.
pub trait ExactScalar:
    Clone
    + PartialEq
    + Zero
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Neg<Output = Self>
{
}
impl<T> ExactScalar for T where
    T: Clone
        + PartialEq
        + Zero
        + std::ops::Add<Output = T>
        + std::ops::Sub<Output = T>
        + std::ops::Mul<Output = T>
        + std::ops::Neg<Output = T>
{
}

/// Minimal CSR matrix over an exact ring (integer or rational entries).
#[derive(Debug, Clone, PartialEq)]
pub struct SpMat<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: ExactScalar> SpMat<T> {
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        SpMat {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self
    where
        T: num::One,
    {
        let mut rows = vec![Vec::new(); n];
        for (i, row) in rows.iter_mut().enumerate() {
            row.push((i, T::one()));
        }
        Self::from_rows(n, rows)
    }

    /// Builds from per-row (col, value) lists; sorts, merges duplicates, drops zeros.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut cols = Vec::new();
        let mut vals: Vec<T> = Vec::new();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1.clone();
                i += 1;
                while i < row.len() && row[i].0 == c {
                    v = v + row[i].1.clone();
                    i += 1;
                }
                if !v.is_zero() {
                    assert!(c < ncols, "column out of range");
                    cols.push(c);
                    vals.push(v);
                }
            }
            indptr.push(cols.len());
        }
        SpMat {
            nrows,
            ncols,
            indptr,
            cols,
            vals,
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: Vec<(usize, usize, T)>) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            rows[r].push((c, v));
        }
        Self::from_rows(ncols, rows)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let range = self.indptr[i]..self.indptr[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, v) in cols.iter().zip(vals) {
                rows[c].push((r, v.clone()));
            }
        }
        Self::from_rows(self.nrows, rows)
    }

    /// Product `self * other` by row merge.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "inner dimensions must agree");
        let mut rows = Vec::with_capacity(self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc: std::collections::BTreeMap<usize, T> = std::collections::BTreeMap::new();
            for (&c, v) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(c);
                for (&bc, bv) in bcols.iter().zip(bvals) {
                    let term = v.clone() * bv.clone();
                    match acc.get_mut(&bc) {
                        Some(slot) => {
                            let sum = slot.clone() + term;
                            *slot = sum;
                        }
                        None => {
                            acc.insert(bc, term);
                        }
                    }
                }
            }
            rows.push(acc.into_iter().collect());
        }
        Self::from_rows(other.ncols, rows)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut rows = vec![Vec::new(); self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, v) in cols.iter().zip(vals) {
                rows[r].push((c, v.clone()));
            }
            let (cols, vals) = other.row(r);
            for (&c, v) in cols.iter().zip(vals) {
                rows[r].push((c, -v.clone()));
            }
        }
        Self::from_rows(self.ncols, rows)
    }

    pub fn is_zero_matrix(&self) -> bool {
        self.vals.iter().all(|v| v.is_zero())
    }
}

impl SpMat<i64> {
    pub fn to_rational(&self) -> SpMat<Rat> {
        SpMat {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|&v| Rat::from_i64(v).unwrap()).collect(),
        }
    }

    pub fn to_f64(&self) -> CsrMatrix<f64> {
        let triplets = self
            .iter_triplets()
            .map(|(r, c, v)| (r, c, *v as f64))
            .collect();
        csr_from_triplets(self.nrows, self.ncols, triplets)
    }
}

impl SpMat<Rat> {
    pub fn to_f64(&self) -> CsrMatrix<f64> {
        let triplets = self
            .iter_triplets()
            .map(|(r, c, v)| (r, c, v.to_f64().expect("finite rational")))
            .collect();
        csr_from_triplets(self.nrows, self.ncols, triplets)
    }
}

impl<T> SpMat<T> {
    pub fn iter_triplets(&self) -> impl Iterator<Item = (usize, usize, &T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |i| (r, self.cols[i], &self.vals[i]))
        })
    }
}
