//! Sparse symmetric solvers: fill-reducing ordering, LDL^T factorization
//! with inertia, conjugate gradients, and a shift-invert block Lanczos
//! eigensolver with spectrum slicing.
//!
//! The eigensolver targets the generalized pencil `C x = λ M x` with `C`
//! symmetric positive semidefinite and `M` symmetric positive definite, the
//! shape produced by curl-curl / mass pairs. Eigenvalues are located by
//! spectrum slicing: the inertia of `C - τ M` (the number of negative pivots
//! of its LDL^T factorization) counts the eigenvalues below `τ` exactly, so
//! every slice knows how many eigenvalues it must converge before it is
//! accepted, and the kernel cluster is counted without computing a single
//! kernel vector. Within a slice, block Lanczos runs on the shift-inverted
//! operator `(C - σM)^{-1} M` with full reorthogonalization in the M inner
//! product; slices whose count does not certify are bisected.
//!
//! # Expected invariants
//! - Reported eigenvalues are ascending, above the zero threshold, and each
//!   pair satisfies `‖Cx − λMx‖ ≤ residual_tol · ‖Mx‖`.
//! - `zero_count` equals the inertia of `C − τM` at the zero threshold `τ`,
//!   an exact count by Sylvester's law of inertia.
//! - Results are deterministic for a fixed seed; the sequential and
//!   data-parallel builds produce identical spectra.
//! - The dense path and the sparse path agree on shared instances (both are
//!   exposed so tests can cross-check them).

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::sparse::{self, matvec};

/// Problem size above which [`solve_spd`] switches from the direct
/// factorization to preconditioned conjugate gradients.
pub const DIRECT_CAP: usize = 200_000;

/// Largest dimension accepted by the dense generalized eigensolver.
pub const DENSE_CAP: usize = 3000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("factorization pivot {pivot} vanished (shift hit an eigenvalue)")]
    SmallPivot { pivot: usize },
    #[error("mass matrix is not positive definite")]
    IndefiniteMass,
    #[error("solver did not converge: {context}")]
    NotConverged { context: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("problem too large for the dense path: {n} > {max}")]
    TooLargeDense { n: usize, max: usize },
}

fn not_converged(context: impl Into<String>) -> SolverError {
    SolverError::NotConverged {
        context: context.into(),
    }
}

// ---------------------------------------------------------------------------
// Fill-reducing ordering: nested dissection with breadth-first separators.
// ---------------------------------------------------------------------------

struct Dissector<'a> {
    adj: &'a CsrMatrix<f64>,
    /// Subproblem stamp per node; BFS stays inside the current stamp.
    tag: Vec<usize>,
    stamp: usize,
    order: Vec<usize>,
}

impl<'a> Dissector<'a> {
    fn neighbors(&self, v: usize) -> &[usize] {
        let offsets = self.adj.row_offsets();
        &self.adj.col_indices()[offsets[v]..offsets[v + 1]]
    }

    /// Levelizes the stamped subgraph from `start`, restarting from unseen
    /// nodes so disconnected pieces are still covered. Returns per-node
    /// levels in `level` and the number of levels.
    fn levelize(&self, nodes: &[usize], start: usize, level: &mut [usize]) -> usize {
        const UNSEEN: usize = usize::MAX;
        for &v in nodes {
            level[v] = UNSEEN;
        }
        let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        level[start] = 0;
        queue.push_back(start);
        let mut max_level = 0;
        let mut seen = 1;
        let mut restart = 0;
        loop {
            while let Some(v) = queue.pop_front() {
                for &w in self.neighbors(v) {
                    if self.tag[w] == self.stamp && level[w] == UNSEEN {
                        level[w] = level[v] + 1;
                        max_level = max_level.max(level[w]);
                        seen += 1;
                        queue.push_back(w);
                    }
                }
            }
            if seen == nodes.len() {
                break;
            }
            while restart < nodes.len() && level[nodes[restart]] != UNSEEN {
                restart += 1;
            }
            level[nodes[restart]] = 0;
            seen += 1;
            queue.push_back(nodes[restart]);
        }
        max_level + 1
    }

    fn dissect(&mut self, nodes: Vec<usize>, level: &mut [usize]) {
        if nodes.len() <= 32 {
            self.order.extend_from_slice(&nodes);
            return;
        }
        self.stamp += 1;
        for &v in &nodes {
            self.tag[v] = self.stamp;
        }
        // Pseudo-peripheral start: the farthest node of a first sweep.
        let n_levels = self.levelize(&nodes, nodes[0], level);
        let far = *nodes
            .iter()
            .filter(|&&v| level[v] != usize::MAX)
            .max_by_key(|&&v| level[v])
            .expect("nonempty subproblem");
        let n_levels = if n_levels > 1 {
            self.levelize(&nodes, far, level)
        } else {
            n_levels
        };
        if n_levels < 3 {
            self.order.extend_from_slice(&nodes);
            return;
        }
        // Separator: the breadth level at half the cumulative node count.
        let mut counts = vec![0usize; n_levels];
        for &v in &nodes {
            counts[level[v]] += 1;
        }
        let mut cut = 0;
        let mut cum = 0;
        for (l, &c) in counts.iter().enumerate() {
            cum += c;
            if 2 * cum >= nodes.len() {
                cut = l.clamp(1, n_levels - 2);
                break;
            }
        }
        let mut below = Vec::new();
        let mut sep = Vec::new();
        let mut above = Vec::new();
        for &v in &nodes {
            match level[v].cmp(&cut) {
                std::cmp::Ordering::Less => below.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
                std::cmp::Ordering::Greater => above.push(v),
            }
        }
        self.dissect(below, level);
        self.dissect(above, level);
        self.order.extend_from_slice(&sep);
    }
}

/// Nested-dissection ordering of a symmetric sparsity pattern: separator
/// nodes are eliminated last. Returns the permutation as new index -> old
/// index.
pub fn fill_reducing_order(a: &CsrMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut d = Dissector {
        adj: a,
        tag: vec![0; n],
        stamp: 0,
        order: Vec::with_capacity(n),
    };
    let mut level = vec![0usize; n];
    d.dissect((0..n).collect(), &mut level);
    debug_assert_eq!(d.order.len(), n);
    d.order
}

// ---------------------------------------------------------------------------
// LDL^T factorization (up-looking, 1x1 pivots) with inertia.
// ---------------------------------------------------------------------------

/// Pivot acceptance policy for [`LdlFactor::factor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pivoting {
    /// Reject non-positive pivots; the input must be positive definite.
    RequireSpd,
    /// Accept negative pivots (symmetric indefinite input, e.g. `C − σM`);
    /// reject only pivots that vanish relative to the matrix scale.
    AllowIndefinite,
}

/// Sparse LDL^T factorization `P A Pᵀ = L D Lᵀ` with unit lower-triangular
/// `L` (stored strictly lower, by columns) and diagonal `D`.
#[derive(Debug)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    n_negative: usize,
}

impl LdlFactor {
    /// Factors a symmetric matrix given in full (both triangles) CSR form.
    pub fn factor(a: &CsrMatrix<f64>, pivoting: Pivoting) -> Result<Self, SolverError> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let perm = fill_reducing_order(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let scale = sparse::max_abs(a).max(f64::MIN_POSITIVE);
        let pivot_floor = 1e-13 * scale;

        // Upper-triangle access of the permuted matrix: column k holds
        // entries (i, v) with i < k, plus the diagonal value.
        let upper_col = |k: usize, out: &mut Vec<(usize, f64)>| -> f64 {
            out.clear();
            let row = a.get_row(perm[k]).expect("row in range");
            let mut diag = 0.0;
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                let i = iperm[c];
                match i.cmp(&k) {
                    std::cmp::Ordering::Less => out.push((i, v)),
                    std::cmp::Ordering::Equal => diag = v,
                    std::cmp::Ordering::Greater => {}
                }
            }
            diag
        };

        // Symbolic pass: elimination tree and per-column fill counts.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        let mut col = Vec::new();
        for k in 0..n {
            flag[k] = k;
            upper_col(k, &mut col);
            for &(mut i, _) in &col {
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz_l = lp[n];
        let mut li = vec![0usize; nnz_l];
        let mut lx = vec![0.0f64; nnz_l];
        let mut head = lp.clone();

        // Numeric pass: each step solves one sparse triangular system along
        // the elimination-tree pattern of the current column.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut d = vec![0.0f64; n];
        let mut flag = vec![usize::MAX; n];
        let mut n_negative = 0usize;
        for k in 0..n {
            flag[k] = k;
            let mut top = n;
            let dk_init = upper_col(k, &mut col);
            for &(i, v) in &col {
                y[i] = v;
                let mut len = 0;
                let mut i = i;
                while flag[i] != k {
                    stack[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            let mut dk = dk_init;
            for t in top..n {
                let i = pattern[t];
                let yi = y[i];
                y[i] = 0.0;
                let lki = yi / d[i];
                for p in lp[i]..head[i] {
                    y[li[p]] -= lx[p] * yi;
                }
                li[head[i]] = k;
                lx[head[i]] = lki;
                head[i] += 1;
                dk -= lki * yi;
            }
            if !dk.is_finite() {
                return Err(SolverError::SmallPivot { pivot: k });
            }
            match pivoting {
                Pivoting::RequireSpd => {
                    if dk <= 0.0 {
                        return Err(SolverError::NotSpd {
                            pivot: k,
                            value: dk,
                        });
                    }
                }
                Pivoting::AllowIndefinite => {
                    if dk.abs() <= pivot_floor {
                        return Err(SolverError::SmallPivot { pivot: k });
                    }
                }
            }
            if dk < 0.0 {
                n_negative += 1;
            }
            d[k] = dk;
        }
        Ok(LdlFactor {
            n,
            perm,
            lp,
            li,
            lx,
            d,
            n_negative,
        })
    }

    /// Number of negative pivots; by Sylvester's law of inertia this equals
    /// the number of negative eigenvalues of the factored matrix.
    pub fn n_negative(&self) -> usize {
        self.n_negative
    }

    pub fn nnz_l(&self) -> usize {
        self.li.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Linear solves.
// ---------------------------------------------------------------------------

/// Jacobi-preconditioned conjugate gradients for SPD systems. Returns the
/// solution and the iteration count.
pub fn cg_jacobi(
    a: &CsrMatrix<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.nrows();
    if b.len() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let mut inv_diag = vec![0.0f64; n];
    for (i, row) in a.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if c == i {
                inv_diag[i] = 1.0 / v;
            }
        }
        if inv_diag[i] == 0.0 || !inv_diag[i].is_finite() {
            return Err(SolverError::NotSpd {
                pivot: i,
                value: 0.0,
            });
        }
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0f64; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0f64; n];
    for it in 0..max_iter {
        matvec(a, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(SolverError::NotSpd {
                pivot: it,
                value: pap,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok((x, it + 1));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(not_converged(format!(
        "conjugate gradients after {max_iter} iterations"
    )))
}

/// Solves an SPD system: direct LDL^T up to [`DIRECT_CAP`] unknowns, Jacobi
/// conjugate gradients with relative residual 1e-12 beyond.
pub fn solve_spd(m: &CsrMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
    if m.nrows() <= DIRECT_CAP {
        let f = LdlFactor::factor(m, Pivoting::RequireSpd)?;
        Ok(f.solve(rhs))
    } else {
        Ok(cg_jacobi(m, rhs, 1e-12, 10 * m.nrows())?.0)
    }
}

// ---------------------------------------------------------------------------
// Dense generalized symmetric eigensolver (verification oracle).
// ---------------------------------------------------------------------------

/// All eigenvalues of `C x = λ M x` (ascending) by dense reduction: `M`'s
/// Cholesky factor maps the pencil to an ordinary symmetric problem.
pub fn dense_gevp(c: &CsrMatrix<f64>, m: &CsrMatrix<f64>) -> Result<Vec<f64>, SolverError> {
    let n = c.nrows();
    if n > DENSE_CAP {
        return Err(SolverError::TooLargeDense { n, max: DENSE_CAP });
    }
    if m.nrows() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: m.nrows(),
        });
    }
    let cd = sparse::to_dense(c);
    let md = sparse::to_dense(m);
    let chol = nalgebra::linalg::Cholesky::new(md).ok_or(SolverError::IndefiniteMass)?;
    // W = L^{-1} C L^{-T}, symmetrized against round-off.
    let l = chol.l();
    let mut w = cd;
    l.solve_lower_triangular_mut(&mut w);
    w.transpose_mut();
    l.solve_lower_triangular_mut(&mut w);
    let w = (&w + w.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::new(w);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

// ---------------------------------------------------------------------------
// Shift-invert block Lanczos with spectrum slicing.
// ---------------------------------------------------------------------------

/// Parameters of [`solve_gevp`].
#[derive(Debug, Clone)]
pub struct EigOptions {
    /// Number of above-threshold eigenvalues to report.
    pub n_eigs: usize,
    /// Zero filter, relative to the largest pencil eigenvalue.
    pub zero_tol: f64,
    /// Initial guess separating the kernel cluster from the first physical
    /// eigenvalue; refined automatically by the slicing.
    pub shift: f64,
    /// Lanczos block width (raised per slice when more multiplicity is
    /// expected).
    pub block: usize,
    /// Per-pair acceptance gate on `‖Cx − λMx‖ / ‖Mx‖`.
    pub residual_tol: f64,
    /// Seed of the starting block.
    pub seed: u64,
    /// Whether to keep M-orthonormal eigenvectors.
    pub want_vectors: bool,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            n_eigs: 10,
            zero_tol: 1e-8,
            shift: 0.5,
            block: 4,
            residual_tol: 1e-8,
            seed: 0x51ce5,
            want_vectors: false,
        }
    }
}

/// Sorted generalized eigenvalues with zero-mode metadata.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    /// Ascending eigenvalues above the zero threshold.
    pub eigenvalues: Vec<f64>,
    /// Exact count (by inertia) of eigenvalues at or below the threshold.
    pub zero_count: usize,
    /// Zero threshold actually used.
    pub zero_threshold: f64,
    /// Largest per-pair residual `‖Cx − λMx‖ / ‖Mx‖` among accepted pairs.
    pub max_residual: f64,
    /// Total shift-invert applications.
    pub iterations: usize,
    /// Number of LDL^T factorizations (slices probed).
    pub factorizations: usize,
    /// M-orthonormal eigenvectors (columns), when requested.
    #[serde(skip)]
    pub eigenvectors: Option<DMatrix<f64>>,
}

/// Number of pencil eigenvalues strictly below `tau`, by inertia of
/// `C − τM`. Exact up to the factorization's pivot floor; a shift landing on
/// an eigenvalue is retried with a small relative offset.
pub fn count_below(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    tau: f64,
) -> Result<usize, SolverError> {
    Ok(factor_shifted(c, m, tau)?.0.n_negative())
}

/// Factors `C − τM`, nudging `τ` when it collides with an eigenvalue.
/// Returns the factorization and the shift actually used.
fn factor_shifted(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    tau: f64,
) -> Result<(LdlFactor, f64), SolverError> {
    let mut t = tau;
    let mut last = SolverError::SmallPivot { pivot: 0 };
    for attempt in 0..4 {
        let k = sparse::csr_add(1.0, c, -t, m);
        match LdlFactor::factor(&k, Pivoting::AllowIndefinite) {
            Ok(f) => return Ok((f, t)),
            Err(e @ SolverError::SmallPivot { .. }) => {
                last = e;
                t = tau * (1.0 + 2e-7 * f64::from(attempt + 1)) + 1e-14;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// One M-orthonormalization sweep of `w` against the existing basis and
/// itself (modified Gram-Schmidt, applied twice by the caller for stability).
/// Returns the triangular coefficients against the trailing block.
struct MGs<'a> {
    m: &'a CsrMatrix<f64>,
}

impl<'a> MGs<'a> {
    fn m_dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut mb = vec![0.0; b.len()];
        matvec(self.m, b.as_slice(), &mut mb);
        a.iter().zip(&mb).map(|(x, y)| x * y).sum()
    }
}

/// Converged slice output: eigenvalues inside the window with vectors.
struct SliceOut {
    values: Vec<f64>,
    vectors: Vec<DVector<f64>>,
    residuals: Vec<f64>,
    iterations: usize,
}

/// Runs shift-invert block Lanczos at `sigma` and returns all Ritz pairs in
/// `(lo, hi)` that pass the residual gate, provided exactly `want` of them
/// converge; `None` when the count cannot be certified within the step cap.
#[allow(clippy::too_many_arguments)]
fn lanczos_slice(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    factor: &LdlFactor,
    sigma: f64,
    lo: f64,
    hi: f64,
    want: usize,
    opts: &EigOptions,
) -> Result<Option<SliceOut>, SolverError> {
    let n = c.nrows();
    let b = opts.block.max(want.min(8)).max(2).min(n);
    let max_basis = n.min((6 * want + 48).max(8 * b));
    let mgs = MGs { m };
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed ^ sigma.to_bits());
    let mut basis: Vec<DVector<f64>> = Vec::new();
    // T is built dense in packed lower form as the basis grows.
    let mut t = DMatrix::<f64>::zeros(max_basis, max_basis);
    let mut iterations = 0usize;

    let random_vec = |rng: &mut ChaCha20Rng| {
        DVector::<f64>::from_fn(n, |_, _| rng.gen::<f64>() - 0.5)
    };
    // Orthonormalizes v against the basis in the M inner product; returns
    // its M-norm after projection (small norm signals a dependent block
    // direction that the caller replaces with a fresh random vector).
    let orthonormalize = |v: &mut DVector<f64>, basis: &[DVector<f64>], mgs: &MGs| -> f64 {
        for _ in 0..2 {
            for q in basis {
                let r = mgs.m_dot(q, v);
                v.axpy(-r, q, 1.0);
            }
        }
        let norm = mgs.m_dot(v, v).max(0.0).sqrt();
        if norm > 0.0 {
            *v /= norm;
        }
        norm
    };

    // Starting block.
    for _ in 0..b {
        let mut v = random_vec(&mut rng);
        let norm = orthonormalize(&mut v, &basis, &mgs);
        if norm <= 1e-12 {
            continue;
        }
        basis.push(v);
    }

    let mut mx = vec![0.0; n];
    let mut last_checked = 0usize;
    while basis.len() < max_basis {
        let len_before = basis.len();
        // Apply the shift-inverted operator to the newest block.
        let start = basis.len().saturating_sub(b);
        let mut new_vecs: Vec<DVector<f64>> = Vec::new();
        for j in start..basis.len() {
            matvec(m, basis[j].as_slice(), &mut mx);
            let w = DVector::from_vec(factor.solve(&mx));
            iterations += 1;
            new_vecs.push(w);
        }
        // Project onto the existing basis to extend T, then orthonormalize.
        for (jj, mut w) in new_vecs.into_iter().enumerate() {
            let j = start + jj;
            for (i, q) in basis.iter().enumerate() {
                let r = mgs.m_dot(q, &w);
                if i < max_basis && j < max_basis {
                    // Symmetric fill keeps T exact under reorthogonalization.
                    t[(i, j)] = r;
                    t[(j, i)] = r;
                }
                w.axpy(-r, q, 1.0);
            }
            let norm = orthonormalize(&mut w, &basis, &mgs);
            if basis.len() >= max_basis {
                break;
            }
            if norm <= 1e-10 {
                // Breakdown: the reached invariant subspace is exhausted in
                // this direction; continue with a fresh random direction.
                let mut v = random_vec(&mut rng);
                let vn = orthonormalize(&mut v, &basis, &mgs);
                if vn <= 1e-12 {
                    break;
                }
                basis.push(v);
            } else {
                let k = basis.len();
                t[(j, k)] = norm;
                t[(k, j)] = norm;
                basis.push(w);
            }
        }

        // Ritz extraction and certification, rate-limited because forming
        // explicit residuals costs a basis combination per candidate.
        let k = basis.len();
        if k == 0 {
            break;
        }
        // A stalled basis (every new direction deflated away) means the
        // reachable invariant subspace is exhausted; check once, then stop.
        let stalled = k == len_before;
        if !stalled && k < last_checked + 2 * b && k < max_basis {
            continue;
        }
        last_checked = k;
        let tk = t.view((0, 0), (k, k)).into_owned();
        let tk = (&tk + tk.transpose()) * 0.5;
        let eig = nalgebra::linalg::SymmetricEigen::new(tk);
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for (idx, &theta) in eig.eigenvalues.iter().enumerate() {
            if theta.abs() <= 1e-300 {
                continue;
            }
            let lambda = sigma + 1.0 / theta;
            if lambda > lo && lambda < hi {
                candidates.push((lambda, idx));
            }
        }
        if candidates.len() < want {
            if stalled {
                break;
            }
            continue;
        }
        // Check the pairs farthest from the shift first; they converge last,
        // so a failed certification aborts cheaply.
        candidates.sort_by(|a, b| {
            (b.0 - sigma).abs().total_cmp(&(a.0 - sigma).abs())
        });
        let mut accepted: Vec<(f64, Option<DVector<f64>>, f64)> = Vec::new();
        let mut all_ok = true;
        for &(lambda, idx) in &candidates {
            let s = eig.eigenvectors.column(idx);
            let mut x = DVector::<f64>::zeros(n);
            for (j, q) in basis.iter().enumerate() {
                x.axpy(s[j], q, 1.0);
            }
            let mut cx = vec![0.0; n];
            matvec(c, x.as_slice(), &mut cx);
            matvec(m, x.as_slice(), &mut mx);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let r = cx[i] - lambda * mx[i];
                num += r * r;
                den += mx[i] * mx[i];
            }
            let res = num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE);
            if res > opts.residual_tol {
                all_ok = false;
                break;
            }
            let kept = opts.want_vectors.then_some(x);
            accepted.push((lambda, kept, res));
        }
        if all_ok && accepted.len() == want {
            accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut out = SliceOut {
                values: Vec::new(),
                vectors: Vec::new(),
                residuals: Vec::new(),
                iterations,
            };
            for (lambda, x, res) in accepted {
                out.values.push(lambda);
                if let Some(x) = x {
                    out.vectors.push(x);
                }
                out.residuals.push(res);
            }
            return Ok(Some(out));
        }
        if all_ok && accepted.len() > want {
            // More converged Ritz values inside the window than the inertia
            // count allows: orthogonality was lost; let the caller bisect.
            break;
        }
        if stalled {
            break;
        }
    }
    Ok(None)
}

/// Recursively collects the `count(lo,hi)` eigenvalues in `(lo, hi)`,
/// bisecting windows whose Lanczos run cannot certify its count.
#[allow(clippy::too_many_arguments)]
fn collect_window(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    lo: f64,
    hi: f64,
    nu_lo: usize,
    nu_hi: usize,
    opts: &EigOptions,
    depth: usize,
    acc: &mut SliceOut,
    factorizations: &mut usize,
) -> Result<(), SolverError> {
    let want = nu_hi - nu_lo;
    if want == 0 {
        return Ok(());
    }
    if depth > 40 {
        return Err(not_converged(format!(
            "spectrum slice ({lo:.6e}, {hi:.6e}) with {want} eigenvalues"
        )));
    }
    const BATCH: usize = 16;
    if want <= BATCH {
        let sigma = 0.5 * (lo + hi);
        let (factor, sigma) = factor_shifted(c, m, sigma)?;
        *factorizations += 1;
        if let Some(out) = lanczos_slice(c, m, &factor, sigma, lo, hi, want, opts)? {
            acc.values.extend(out.values);
            acc.vectors.extend(out.vectors);
            acc.residuals.extend(out.residuals);
            acc.iterations += out.iterations;
            return Ok(());
        }
    }
    // Split at the midpoint (nudged off exact eigenvalues by the shifted
    // factorization itself).
    let (mid_factor, mid) = factor_shifted(c, m, 0.5 * (lo + hi))?;
    *factorizations += 1;
    let nu_mid = mid_factor.n_negative();
    drop(mid_factor);
    collect_window(c, m, lo, mid, nu_lo, nu_mid, opts, depth + 1, acc, factorizations)?;
    collect_window(c, m, mid, hi, nu_mid, nu_hi, opts, depth + 1, acc, factorizations)
}

/// Largest pencil eigenvalue estimate by power iteration on `M^{-1} C`.
fn lambda_max_estimate(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    seed: u64,
) -> Result<f64, SolverError> {
    let n = c.nrows();
    let mf = LdlFactor::factor(m, Pivoting::RequireSpd).map_err(|e| match e {
        SolverError::NotSpd { .. } => SolverError::IndefiniteMass,
        other => other,
    })?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut cz = vec![0.0; n];
    let mut lam = 0.0f64;
    for _ in 0..40 {
        matvec(c, &z, &mut cz);
        let w = mf.solve(&cz);
        // Rayleigh quotient in the M inner product: zᵀCz / zᵀMz with w = M⁻¹Cz.
        let num: f64 = z.iter().zip(&cz).map(|(a, b)| a * b).sum();
        let mut mz = vec![0.0; n];
        matvec(m, &z, &mut mz);
        let den: f64 = z.iter().zip(&mz).map(|(a, b)| a * b).sum();
        if den > 0.0 {
            lam = num / den;
        }
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        for i in 0..n {
            z[i] = w[i] / norm;
        }
    }
    Ok(lam.max(f64::MIN_POSITIVE))
}

/// Solves the generalized symmetric pencil `C x = λ M x` for the `n_eigs`
/// smallest eigenvalues above the zero threshold. Small problems go through
/// the dense path; larger ones are sliced by inertia counts and resolved by
/// shift-invert block Lanczos per slice, so both the zero-cluster size and
/// every window's eigenvalue count are certified.
pub fn solve_gevp(
    c: &CsrMatrix<f64>,
    m: &CsrMatrix<f64>,
    opts: &EigOptions,
) -> Result<Spectrum, SolverError> {
    let n = c.nrows();
    if m.nrows() != n || c.ncols() != n || m.ncols() != n {
        return Err(SolverError::Dimension {
            expected: n,
            got: m.nrows(),
        });
    }
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            zero_count: 0,
            zero_threshold: 0.0,
            max_residual: 0.0,
            iterations: 0,
            factorizations: 0,
            eigenvectors: None,
        });
    }
    if n <= 48 {
        let vals = dense_gevp(c, m)?;
        let lam_max = vals.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let threshold = opts.zero_tol * lam_max;
        let zero_count = vals.iter().filter(|&&v| v <= threshold).count();
        let eigenvalues: Vec<f64> = vals
            .iter()
            .copied()
            .filter(|&v| v > threshold)
            .take(opts.n_eigs)
            .collect();
        return Ok(Spectrum {
            eigenvalues,
            zero_count,
            zero_threshold: threshold,
            max_residual: 0.0,
            iterations: 0,
            factorizations: 0,
            eigenvectors: None,
        });
    }

    let lam_max = lambda_max_estimate(c, m, opts.seed)?;
    let threshold = opts.zero_tol * lam_max;
    let mut factorizations = 0usize;
    let (f_zero, threshold) = factor_shifted(c, m, threshold)?;
    factorizations += 1;
    let zero_count = f_zero.n_negative();
    drop(f_zero);

    // Upper slice boundary: grow until enough eigenvalues are bracketed.
    let mut hi = (2.0 * opts.shift).max(threshold * 4.0).max(1e-8);
    let mut nu_hi;
    loop {
        let (f, hi_used) = factor_shifted(c, m, hi)?;
        factorizations += 1;
        nu_hi = f.n_negative();
        hi = hi_used;
        if nu_hi >= zero_count + opts.n_eigs || hi > 1e6 * lam_max.max(1.0) {
            break;
        }
        hi *= 4.0;
    }
    if nu_hi < zero_count + opts.n_eigs {
        return Err(not_converged(format!(
            "bracketing {} eigenvalues above the zero threshold",
            opts.n_eigs
        )));
    }

    let mut acc = SliceOut {
        values: Vec::new(),
        vectors: Vec::new(),
        residuals: Vec::new(),
        iterations: 0,
    };
    collect_window(
        c,
        m,
        threshold,
        hi,
        zero_count,
        nu_hi,
        opts,
        0,
        &mut acc,
        &mut factorizations,
    )?;

    let mut order: Vec<usize> = (0..acc.values.len()).collect();
    order.sort_by(|&a, &b| acc.values[a].total_cmp(&acc.values[b]));
    order.truncate(opts.n_eigs);
    let eigenvalues: Vec<f64> = order.iter().map(|&i| acc.values[i]).collect();
    let max_residual = order
        .iter()
        .map(|&i| acc.residuals[i])
        .fold(0.0f64, f64::max);
    let eigenvectors = if opts.want_vectors {
        let mut v = DMatrix::<f64>::zeros(n, order.len());
        for (col, &i) in order.iter().enumerate() {
            v.set_column(col, &acc.vectors[i]);
        }
        Some(v)
    } else {
        None
    };
    Ok(Spectrum {
        eigenvalues,
        zero_count,
        zero_threshold: threshold,
        max_residual,
        iterations: acc.iterations,
        factorizations,
        eigenvectors,
    })
}
