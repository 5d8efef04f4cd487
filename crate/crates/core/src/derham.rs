//! Discrete de Rham complex: incidence matrices, commutation checks, and
//! cohomology ranks.
//!
//! The complex on a triangle mesh is `V0 -D0-> V1 -D1-> V2` with the
//! lowest-order spaces (vertex, edge, face coefficients). `D0` maps a vertex
//! function to signed differences along canonical edges; `D1` maps edge
//! circulations to signed face sums.
//!
//! # Expected invariants
//! - `D1 D0 = 0` exactly (integer arithmetic).
//! - Betti numbers from rank counts match the mesh topology: `b0` connected
//!   components, `b2 = 0` for meshes with boundary, and `b0 - b1 + b2` equal
//!   to the Euler characteristic.
//! - Subdivision matrices are cochain maps: `D^k_fine S^k = S^{k+1} D^k_coarse`.

use nalgebra_sparse::CsrMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{SimplexSet, TriMesh};
use crate::sparse::{self, Rat, SpMat};
use crate::subdivision::{Hierarchy, Scheme};

/// Size cap for exact rank computation (total simplex count of the mesh).
pub const RANK_SIZE_CAP: usize = 5000;

#[derive(Debug, Error)]
pub enum DeRhamError {
    /// Rank computation is cubic in the complex size; refuse sizes where it
    /// would dominate the run.
    #[error("complex too large for dense rank computation: {n} > {max} simplices")]
    TooLarge { n: usize, max: usize },
    /// An interior column of a subdivision matrix carries weight at a
    /// boundary fine simplex, violating the boundary-locality assumption
    /// behind the zero-trace restriction.
    #[error("zero-trace restriction leaks: column {column} has entry {value:.3e} at boundary row {row}")]
    BoundaryLeak { column: usize, row: usize, value: f64 },
    #[error(transparent)]
    Subdivision(#[from] crate::subdivision::SubdivisionError),
}

/// Signed incidence matrix `D^k` of the mesh as an integer CSR matrix.
///
/// `k = 0`: edges by vertices, entries -1 at the tail and +1 at the head of
/// each canonical (low before high) edge. `k = 1`: faces by edges with the
/// orientation signs of each face's counterclockwise traversal.
pub fn build_d(mesh: &TriMesh, k: usize) -> SpMat<i64> {
    match k {
        0 => {
            let rows = mesh
                .edges
                .iter()
                .map(|&[a, b]| vec![(a, -1i64), (b, 1i64)])
                .collect();
            SpMat::from_rows(mesh.n_vertices(), rows)
        }
        1 => {
            let rows = mesh
                .face_edges
                .iter()
                .map(|fe| {
                    let mut r: Vec<(usize, i64)> =
                        fe.iter().map(|&(e, s)| (e, s as i64)).collect();
                    r.sort_by_key(|&(c, _)| c);
                    r
                })
                .collect();
            SpMat::from_rows(mesh.n_edges(), rows)
        }
        _ => panic!("incidence degree {k} out of range (0 or 1)"),
    }
}

/// Largest absolute entry of `D^k_f S^k - S^{k+1} D^k_c` for one refinement
/// step, in floating point.
pub fn commutation_residual(
    coarse: &TriMesh,
    fine: &TriMesh,
    sk: &CsrMatrix<f64>,
    sk1: &CsrMatrix<f64>,
    k: usize,
) -> f64 {
    let df = build_d(fine, k).to_f64();
    let dc = build_d(coarse, k).to_f64();
    let lhs = sparse::spgemm(&df, sk);
    let rhs = sparse::spgemm(sk1, &dc);
    sparse::max_abs_diff(&lhs, &rhs)
}

/// Exact commutation check over the rationals; `true` when every entry of
/// the difference vanishes.
pub fn commutation_exact(
    coarse: &TriMesh,
    fine: &TriMesh,
    sk: &SpMat<Rat>,
    sk1: &SpMat<Rat>,
    k: usize,
) -> bool {
    let df = build_d(fine, k).to_rational();
    let dc = build_d(coarse, k).to_rational();
    let lhs = df.mul(sk);
    let rhs = sk1.mul(&dc);
    lhs.sub(&rhs).is_zero_matrix()
}

fn rank_of(d: &SpMat<i64>) -> usize {
    sparse::dense_rank(&sparse::to_dense(&d.to_f64()))
}

/// Incidence matrix of the boundary-restricted (relative) complex
/// `V0_int -> V1_int -> V2`: interior-vertex columns and interior-edge rows
/// for `k = 0`, interior-edge columns and all face rows for `k = 1`. The
/// composition stays exactly zero because boundary edges touch only
/// boundary vertices.
pub fn build_d_relative(mesh: &TriMesh, k: usize) -> SpMat<i64> {
    let full = build_d(mesh, k);
    let (row_ids, col_ids) = match k {
        0 => (mesh.interior_simplices(1).ids, mesh.interior_simplices(0).ids),
        1 => ((0..mesh.n_faces()).collect(), mesh.interior_simplices(1).ids),
        _ => panic!("incidence degree {k} out of range (0 or 1)"),
    };
    let col_pos: std::collections::BTreeMap<usize, usize> = col_ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| (id, pos))
        .collect();
    let rows = row_ids
        .iter()
        .map(|&r| {
            let (cols, vals) = full.row(r);
            cols.iter()
                .zip(vals)
                .filter_map(|(c, &v)| col_pos.get(c).map(|&pos| (pos, v)))
                .collect()
        })
        .collect();
    SpMat::from_rows(col_ids.len(), rows)
}

fn rank_pair(mesh: &TriMesh, relative: bool) -> Result<(usize, usize), DeRhamError> {
    let n = mesh.n_vertices() + mesh.n_edges() + mesh.n_faces();
    if n > RANK_SIZE_CAP {
        return Err(DeRhamError::TooLarge {
            n,
            max: RANK_SIZE_CAP,
        });
    }
    let (d0, d1) = if relative {
        (build_d_relative(mesh, 0), build_d_relative(mesh, 1))
    } else {
        (build_d(mesh, 0), build_d(mesh, 1))
    };
    Ok((rank_of(&d0), rank_of(&d1)))
}

/// Betti numbers `(b0, b1, b2)` of the mesh from ranks of the incidence
/// matrices. With `relative` set, the boundary-restricted complex is used,
/// computing the relative (zero-trace) cohomology dimensions.
pub fn betti(mesh: &TriMesh, relative: bool) -> Result<(usize, usize, usize), DeRhamError> {
    let (r0, r1) = rank_pair(mesh, relative)?;
    let (n0, n1) = if relative {
        (mesh.interior_simplices(0).len(), mesh.interior_simplices(1).len())
    } else {
        (mesh.n_vertices(), mesh.n_edges())
    };
    let b0 = n0 - r0;
    let b1 = n1 - r0 - r1;
    let b2 = mesh.n_faces() - r1;
    Ok((b0, b1, b2))
}

/// Summary of the structural checks run on one subdivision hierarchy.
#[derive(Debug, Clone, Serialize)]
pub struct ComplexReport {
    pub scheme: String,
    pub levels: usize,
    /// Whether `D1 D0 = 0` holds exactly on every level.
    pub dd_zero: bool,
    /// Worst float commutation residual across levels and degrees.
    pub commutation_residual: f64,
    /// Whether the exact-rational commutation check passed on every level
    /// where exact matrices are available.
    pub commutation_exact: bool,
    /// Levels where exact matrices were available for the check.
    pub exact_levels: usize,
    /// Betti numbers per level (levels small enough for dense ranks).
    pub betti: Vec<(usize, usize, usize)>,
    /// Relative (zero-trace) Betti numbers for the same levels.
    pub betti_relative: Vec<(usize, usize, usize)>,
    /// Ranks of `D0` and `D1` for the same levels.
    pub ranks: Vec<(usize, usize)>,
}

/// Runs the structural verification on a hierarchy: `D D = 0` per level,
/// commutation at every level step and degree, and Betti numbers where the
/// complex is small enough for dense ranks.
pub fn verify_hierarchy(h: &Hierarchy) -> Result<ComplexReport, DeRhamError> {
    let mut dd_zero = true;
    let mut worst = 0.0f64;
    let mut exact_ok = true;
    let mut exact_levels = 0usize;
    let mut betti_per_level = Vec::new();
    let mut betti_relative = Vec::new();
    let mut ranks = Vec::new();
    for mesh in &h.meshes {
        let d0 = build_d(mesh, 0).to_rational();
        let d1 = build_d(mesh, 1).to_rational();
        if !d1.mul(&d0).is_zero_matrix() {
            dd_zero = false;
        }
        let d0r = build_d_relative(mesh, 0).to_rational();
        let d1r = build_d_relative(mesh, 1).to_rational();
        if !d1r.mul(&d0r).is_zero_matrix() {
            dd_zero = false;
        }
        if mesh.n_vertices() + mesh.n_edges() + mesh.n_faces() <= RANK_SIZE_CAP {
            betti_per_level.push(betti(mesh, false)?);
            betti_relative.push(betti(mesh, true)?);
            ranks.push(rank_pair(mesh, false)?);
        }
    }
    for l in 0..h.top_level() {
        let coarse = h.mesh(l);
        let fine = h.mesh(l + 1);
        for k in 0..2usize {
            let sk = &h.per_level_s[l][k];
            let sk1 = &h.per_level_s[l][k + 1];
            worst = worst.max(commutation_residual(coarse, fine, &sk.f, &sk1.f, k));
            if let (Some(ek), Some(ek1)) = (sk.exact.as_ref(), sk1.exact.as_ref()) {
                exact_levels += 1;
                if !commutation_exact(coarse, fine, ek, ek1, k) {
                    exact_ok = false;
                }
            }
        }
    }
    Ok(ComplexReport {
        scheme: match h.scheme {
            Scheme::LoopWang => "loop".to_string(),
            Scheme::Whitney => "whitney".to_string(),
        },
        levels: h.top_level(),
        dd_zero,
        commutation_residual: worst,
        commutation_exact: exact_ok,
        exact_levels,
        betti: betti_per_level,
        betti_relative,
        ranks,
    })
}

/// Max-abs residual of the accumulated commutation identity
/// `D^k_{l''}·A^k_{l'→l''} − A^{k+1}_{l'→l''}·D^k_{l'}`.
pub fn check_commutation(
    h: &Hierarchy,
    k: usize,
    from: usize,
    to: usize,
) -> Result<f64, DeRhamError> {
    let ak = h.accumulate(k, from, to)?;
    let ak1 = h.accumulate(k + 1, from, to)?;
    Ok(commutation_residual(
        h.mesh(from),
        h.mesh(to),
        &ak.f,
        &ak1.f,
        k,
    ))
}

/// A subdivision matrix restricted to interior coarse columns, spanning the
/// zero-trace subspace.
#[derive(Debug, Clone)]
pub struct ZeroTraceMatrix {
    pub k: usize,
    pub from_level: usize,
    pub to_level: usize,
    /// Fine rows (all simplices) by interior coarse columns.
    pub f: CsrMatrix<f64>,
    /// Interior coarse simplex ids backing the columns.
    pub interior: SimplexSet,
}

/// Deletes the coarse boundary columns of an accumulated subdivision
/// matrix. Every retained column must vanish at all boundary fine rows;
/// a violation signals a scheme without boundary locality and is reported
/// as [`DeRhamError::BoundaryLeak`].
pub fn restrict_zero_trace(
    a: &crate::subdivision::SubdivisionMatrix,
    h: &Hierarchy,
) -> Result<ZeroTraceMatrix, DeRhamError> {
    let coarse = h.mesh(a.from_level);
    let fine = h.mesh(a.to_level);
    let interior = coarse.interior_simplices(a.k);
    let all_rows: Vec<usize> = (0..a.nrows()).collect();
    let f = sparse::select(&a.f, &all_rows, &interior.ids);
    for (row, csr_row) in f.row_iter().enumerate() {
        if !fine.is_boundary(a.k, row) {
            continue;
        }
        for (&c, &v) in csr_row.col_indices().iter().zip(csr_row.values()) {
            if v.abs() > 1e-13 {
                return Err(DeRhamError::BoundaryLeak {
                    column: interior.ids[c],
                    row,
                    value: v,
                });
            }
        }
    }
    Ok(ZeroTraceMatrix {
        k: a.k,
        from_level: a.from_level,
        to_level: a.to_level,
        f,
        interior,
    })
}
