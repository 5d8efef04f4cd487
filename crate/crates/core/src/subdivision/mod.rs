//! Topological quadrisection, Loop geometric averaging, and k-form subdivision
//! matrices.
//!
//! One refinement step splits every coarse face into four children (three
//! corner children plus a center child) and inserts one odd vertex per coarse
//! edge. The per-level subdivision matrices `S^k` carry coarse k-form
//! coefficients to the fine mesh; accumulated products `A^k_{l->L}` span the
//! subdivision form spaces inside the finest FE space.
//!
//! # Expected invariants
//! - Counting: |V_f| = |V_c| + |E_c|, |E_f| = 2|E_c| + 3|F_c|, |F_f| = 4|F_c|.
//! - S^0 rows sum to 1 exactly; S^2 rows sum to 1/4 per refinement step for
//!   both schemes (coefficients are face integrals, so the density-value
//!   scheme 4 S^2 is the one that preserves constants).
//! - Rows of S^k attached to boundary fine simplices only reference boundary
//!   coarse simplices (boundary locality).
//! - The matrices commute with the incidence matrices:
//!   D^k_fine S^k = S^{k+1} D^k_coarse for k = 0, 1.

mod loop0;
mod patch;
pub mod symval;
mod system;
pub mod table;
pub mod wang;
pub mod whitney;

use nalgebra_sparse::CsrMatrix;

use crate::mesh::{Degree, MeshError, SimplexSet, TriMesh};
use crate::sparse::{self, Rat, SpMat};
use symval::SymVal;
use table::StencilTable;
use thiserror::Error;

pub use loop0::loop_beta;

/// Subdivision scheme for form coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Loop rules for 0-forms, commutation-constrained Wang-style stencils for
    /// 1- and 2-forms. Smooths geometry.
    LoopWang,
    /// Midpoint refinement with exact reproduction of the piecewise-linear
    /// Whitney bases. Preserves geometry.
    Whitney,
}

#[derive(Debug, Error)]
pub enum SubdivisionError {
    #[error("level order violated: l = {l} > L = {level_top}")]
    LevelOrder { l: usize, level_top: usize },
    #[error("level {level} out of range (hierarchy has {available} levels)")]
    LevelRange { level: usize, available: usize },
    #[error(
        "no stencil available for {context} and the constraint-solver fallback is disabled"
    )]
    UnsupportedConfiguration { context: String },
    #[error("constraint system infeasible while building {context}")]
    Infeasible { context: String },
    #[error("refined mesh failed validation: {0}")]
    Mesh(#[from] MeshError),
}

/// Origin of a fine vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Carried over from the coarse vertex with this id.
    Even(usize),
    /// Inserted on the coarse edge with this id.
    Odd(usize),
}

/// Origin of a fine edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeParent {
    /// One of the two halves of the coarse edge with this id.
    HalfOf(usize),
    /// One of the three center-triangle edges inside the coarse face with this id.
    Interior(usize),
}

/// Bookkeeping of one refinement step.
#[derive(Debug, Clone)]
pub struct RefinementMap {
    /// Coarse face id -> [corner child 0, corner child 1, corner child 2, center child].
    pub face_children: Vec<[usize; 4]>,
    /// Fine vertex id -> origin.
    pub vertex_provenance: Vec<Provenance>,
    /// Fine edge id -> origin.
    pub edge_parentage: Vec<EdgeParent>,
}

/// Sparse subdivision matrix for one form degree and one level step (or an
/// accumulated product of steps).
#[derive(Debug, Clone)]
pub struct SubdivisionMatrix {
    pub k: Degree,
    pub from_level: usize,
    pub to_level: usize,
    pub scheme: Scheme,
    /// Float entries; derived from `exact` when that is present.
    pub f: CsrMatrix<f64>,
    /// Exact rational entries, present when every weight is rational (always
    /// for Whitney; for Loop/Wang when all interior valences lie in {3,4,6}).
    pub exact: Option<SpMat<Rat>>,
}

impl SubdivisionMatrix {
    fn from_exact(
        k: Degree,
        from_level: usize,
        to_level: usize,
        scheme: Scheme,
        exact: SpMat<Rat>,
    ) -> Self {
        let f = exact.to_f64();
        SubdivisionMatrix {
            k,
            from_level,
            to_level,
            scheme,
            f,
            exact: Some(exact),
        }
    }

    /// Builds from rows of symbolic values; keeps the exact form only if every
    /// entry is rational.
    fn from_sym_rows(
        k: Degree,
        from_level: usize,
        to_level: usize,
        scheme: Scheme,
        ncols: usize,
        rows: Vec<Vec<(usize, SymVal)>>,
    ) -> Self {
        let all_rational = rows
            .iter()
            .all(|r| r.iter().all(|(_, v)| v.is_rational()));
        if all_rational {
            let rat_rows = rows
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|(c, v)| (c, v.into_rational().expect("checked rational")))
                        .collect()
                })
                .collect();
            Self::from_exact(
                k,
                from_level,
                to_level,
                scheme,
                SpMat::from_rows(ncols, rat_rows),
            )
        } else {
            let triplets = rows
                .iter()
                .enumerate()
                .flat_map(|(r, row)| row.iter().map(move |(c, v)| (r, *c, v.to_f64())))
                .collect();
            SubdivisionMatrix {
                k,
                from_level,
                to_level,
                scheme,
                f: sparse::csr_from_triplets(rows.len(), ncols, triplets),
                exact: None,
            }
        }
    }

    pub fn nrows(&self) -> usize {
        self.f.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.f.ncols()
    }
}

/// Fine topology produced by quadrisection, before positions are chosen.
#[derive(Debug, Clone)]
pub struct RefinedTopology {
    pub n_fine_vertices: usize,
    pub fine_faces: Vec<[usize; 3]>,
    pub vertex_provenance: Vec<Provenance>,
    pub face_children: Vec<[usize; 4]>,
}

/// Splits every face into four. Fine vertex ids are the coarse vertex ids
/// followed by one odd vertex per coarse edge in canonical edge order; child
/// faces are emitted per coarse face as corner 0, corner 1, corner 2, center.
pub fn refine_topology(coarse: &TriMesh) -> RefinedTopology {
    let nv = coarse.n_vertices();
    let n_fine_vertices = nv + coarse.n_edges();
    let mut vertex_provenance: Vec<Provenance> = (0..nv).map(Provenance::Even).collect();
    vertex_provenance.extend((0..coarse.n_edges()).map(Provenance::Odd));
    let odd = |e: usize| nv + e;

    let mut fine_faces = Vec::with_capacity(4 * coarse.n_faces());
    let mut face_children = Vec::with_capacity(coarse.n_faces());
    for (fi, f) in coarse.faces.iter().enumerate() {
        let [v0, v1, v2] = *f;
        let m01 = odd(coarse.edge_id(v0, v1).expect("face edge exists"));
        let m12 = odd(coarse.edge_id(v1, v2).expect("face edge exists"));
        let m20 = odd(coarse.edge_id(v2, v0).expect("face edge exists"));
        let base = fine_faces.len();
        fine_faces.push([v0, m01, m20]);
        fine_faces.push([v1, m12, m01]);
        fine_faces.push([v2, m20, m12]);
        fine_faces.push([m01, m12, m20]);
        face_children.push([base, base + 1, base + 2, base + 3]);
        debug_assert_eq!(base, 4 * fi);
    }
    RefinedTopology {
        n_fine_vertices,
        fine_faces,
        vertex_provenance,
        face_children,
    }
}

/// Fine vertex positions under Loop geometric averaging: even vertices are
/// re-weighted over their neighbors, odd vertices are weighted averages over
/// the edge's surrounding stencil. Boundary vertices depend only on coarse
/// boundary vertices.
pub fn loop_positions(coarse: &TriMesh) -> Vec<[f64; 3]> {
    weighted_positions(coarse, &loop0::build_s0_rows(coarse))
}

/// Fine vertex positions under midpoint (Whitney) refinement.
pub fn whitney_positions(coarse: &TriMesh) -> Vec<[f64; 3]> {
    let rows = whitney::s0_rows(coarse);
    let sym_rows: Vec<Vec<(usize, SymVal)>> = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|(c, w)| (c, SymVal::from_rat(w)))
                .collect()
        })
        .collect();
    weighted_positions(coarse, &sym_rows)
}

fn weighted_positions(coarse: &TriMesh, rows: &[Vec<(usize, SymVal)>]) -> Vec<[f64; 3]> {
    rows.iter()
        .map(|row| {
            let mut p = [0.0; 3];
            for (v, w) in row {
                let w = w.to_f64();
                for (pi, xi) in p.iter_mut().zip(coarse.positions[*v]) {
                    *pi += w * xi;
                }
            }
            p
        })
        .collect()
}

/// Refines a mesh one level under the given scheme, producing the fine mesh
/// and the full refinement bookkeeping.
pub fn refine_mesh(
    coarse: &TriMesh,
    scheme: Scheme,
) -> Result<(TriMesh, RefinementMap), SubdivisionError> {
    let topo = refine_topology(coarse);
    let positions = match scheme {
        Scheme::LoopWang => loop_positions(coarse),
        Scheme::Whitney => whitney_positions(coarse),
    };
    let fine = TriMesh::build(coarse.dim, positions, topo.fine_faces)?;
    debug_assert_eq!(fine.n_vertices(), topo.n_fine_vertices);
    debug_assert_eq!(fine.n_edges(), 2 * coarse.n_edges() + 3 * coarse.n_faces());

    let nv = coarse.n_vertices();
    let edge_parentage = fine
        .edges
        .iter()
        .map(|&[p, q]| {
            let prov = |v: usize| topo.vertex_provenance[v];
            match (prov(p), prov(q)) {
                (Provenance::Even(v), Provenance::Odd(e)) | (Provenance::Odd(e), Provenance::Even(v)) => {
                    debug_assert!(coarse.edges[e].contains(&v));
                    EdgeParent::HalfOf(e)
                }
                (Provenance::Odd(e1), Provenance::Odd(e2)) => {
                    let [f0, f1] = coarse.edge_faces[e1];
                    let in_face = |f: usize| {
                        f != usize::MAX
                            && coarse.face_edges[f].iter().any(|&(e, _)| e == e2)
                    };
                    let f = if in_face(f0) {
                        f0
                    } else {
                        debug_assert!(in_face(f1));
                        f1
                    };
                    EdgeParent::Interior(f)
                }
                _ => unreachable!("no fine edge joins two even vertices"),
            }
        })
        .collect();
    let _ = nv;
    Ok((
        fine,
        RefinementMap {
            face_children: topo.face_children,
            vertex_provenance: topo.vertex_provenance,
            edge_parentage,
        },
    ))
}

/// A mesh hierarchy with per-level subdivision matrices for all three form
/// degrees.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub scheme: Scheme,
    pub meshes: Vec<TriMesh>,
    pub maps: Vec<RefinementMap>,
    /// `per_level_s[l][k]` maps level `l` to level `l+1` for k-forms.
    pub per_level_s: Vec<[SubdivisionMatrix; 3]>,
}

impl Hierarchy {
    /// Builds `levels` refinement steps above `initial` with the built-in
    /// stencil table.
    pub fn build(
        initial: TriMesh,
        levels: usize,
        scheme: Scheme,
    ) -> Result<Self, SubdivisionError> {
        Self::build_with_table(initial, levels, scheme, &StencilTable::builtin())
    }

    /// Builds with an explicit stencil table (entries are trusted; corrupt
    /// tables surface in the commutation checks).
    pub fn build_with_table(
        initial: TriMesh,
        levels: usize,
        scheme: Scheme,
        stencil_table: &StencilTable,
    ) -> Result<Self, SubdivisionError> {
        let mut meshes = vec![initial];
        let mut maps = Vec::with_capacity(levels);
        let mut per_level_s = Vec::with_capacity(levels);
        for l in 0..levels {
            let coarse = &meshes[l];
            let (fine, map) = refine_mesh(coarse, scheme)?;
            let s = build_level_matrices(coarse, &fine, &map, scheme, l, stencil_table)?;
            meshes.push(fine);
            maps.push(map);
            per_level_s.push(s);
        }
        Ok(Hierarchy {
            scheme,
            meshes,
            maps,
            per_level_s,
        })
    }

    pub fn top_level(&self) -> usize {
        self.meshes.len() - 1
    }

    pub fn mesh(&self, level: usize) -> &TriMesh {
        &self.meshes[level]
    }

    /// Accumulated subdivision matrix `A^k_{l->L} = S_{L-1->L} ... S_{l->l+1}`.
    pub fn accumulate(
        &self,
        k: Degree,
        l: usize,
        level_top: usize,
    ) -> Result<SubdivisionMatrix, SubdivisionError> {
        if l > level_top {
            return Err(SubdivisionError::LevelOrder { l, level_top });
        }
        if level_top > self.top_level() {
            return Err(SubdivisionError::LevelRange {
                level: level_top,
                available: self.top_level(),
            });
        }
        let n_l = self.meshes[l].n_simplices(k);
        if l == level_top {
            return Ok(SubdivisionMatrix::from_exact(
                k,
                l,
                level_top,
                self.scheme,
                SpMat::<Rat>::identity(n_l),
            ));
        }
        let mut f = self.per_level_s[l][k].f.clone();
        let mut exact = self.per_level_s[l][k].exact.clone();
        for step in l + 1..level_top {
            let s = &self.per_level_s[step][k];
            f = sparse::spgemm(&s.f, &f);
            exact = match (s.exact.as_ref(), exact) {
                (Some(se), Some(ae)) => Some(se.mul(&ae)),
                _ => None,
            };
        }
        Ok(SubdivisionMatrix {
            k,
            from_level: l,
            to_level: level_top,
            scheme: self.scheme,
            f,
            exact,
        })
    }

    /// Descendant fine faces at `level_top` of a set of faces at level `l`.
    pub fn refined_faces(
        &self,
        l: usize,
        level_top: usize,
        faces: &SimplexSet,
    ) -> SimplexSet {
        assert_eq!(faces.degree, 2);
        let mut current = faces.ids.clone();
        for step in l..level_top {
            current = current
                .iter()
                .flat_map(|&f| self.maps[step].face_children[f])
                .collect();
        }
        SimplexSet::new(2, current)
    }
}

/// Builds the per-level subdivision matrices for all three degrees.
fn build_level_matrices(
    coarse: &TriMesh,
    fine: &TriMesh,
    map: &RefinementMap,
    scheme: Scheme,
    level: usize,
    stencil_table: &StencilTable,
) -> Result<[SubdivisionMatrix; 3], SubdivisionError> {
    match scheme {
        Scheme::Whitney => {
            let s0 = SpMat::from_rows(coarse.n_vertices(), whitney::s0_rows(coarse));
            let s1 = whitney::s1(coarse, fine, map);
            let s2 = whitney::s2(coarse, map);
            Ok([
                SubdivisionMatrix::from_exact(0, level, level + 1, scheme, s0),
                SubdivisionMatrix::from_exact(1, level, level + 1, scheme, s1),
                SubdivisionMatrix::from_exact(2, level, level + 1, scheme, s2),
            ])
        }
        Scheme::LoopWang => {
            let s0_rows = loop0::build_s0_rows(coarse);
            let (s1_rows, s2_rows) =
                wang::build_s1_s2(coarse, fine, map, &s0_rows, stencil_table)?;
            let s0 = SubdivisionMatrix::from_sym_rows(
                0,
                level,
                level + 1,
                scheme,
                coarse.n_vertices(),
                s0_rows,
            );
            let s1 = SubdivisionMatrix::from_sym_rows(
                1,
                level,
                level + 1,
                scheme,
                coarse.n_edges(),
                s1_rows,
            );
            let s2 = SubdivisionMatrix::from_sym_rows(
                2,
                level,
                level + 1,
                scheme,
                coarse.n_faces(),
                s2_rows,
            );
            Ok([s0, s1, s2])
        }
    }
}

/// Builds a single per-level subdivision matrix (thin wrapper over the joint
/// per-level construction). The 0-form matrix depends only on the vertex
/// stencils, so it skips the edge and face construction entirely.
pub fn build_s(
    k: Degree,
    coarse: &TriMesh,
    scheme: Scheme,
) -> Result<SubdivisionMatrix, SubdivisionError> {
    if k == 0 {
        let s0 = match scheme {
            Scheme::Whitney => SpMat::from_rows(coarse.n_vertices(), whitney::s0_rows(coarse)),
            Scheme::LoopWang => {
                return Ok(SubdivisionMatrix::from_sym_rows(
                    0,
                    0,
                    1,
                    scheme,
                    coarse.n_vertices(),
                    loop0::build_s0_rows(coarse),
                ));
            }
        };
        return Ok(SubdivisionMatrix::from_exact(0, 0, 1, scheme, s0));
    }
    let (fine, map) = refine_mesh(coarse, scheme)?;
    let all = build_level_matrices(coarse, &fine, &map, scheme, 0, &StencilTable::builtin())?;
    Ok(all.into_iter().nth(k).expect("k in 0..=2"))
}

/// Fine faces carrying any nonzero coefficient of column `i` of an accumulated
/// matrix: the fine faces incident to every fine k-simplex with a nonzero row
/// entry in that column.
pub fn column_support(
    a: &SubdivisionMatrix,
    h: &Hierarchy,
    i: usize,
) -> SimplexSet {
    let fine = h.mesh(a.to_level);
    let mut simplex_ids = Vec::new();
    for (r, row) in a.f.row_iter().enumerate() {
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            if c == i && v != 0.0 {
                simplex_ids.push(r);
            }
        }
    }
    let simplices = SimplexSet::new(a.k, simplex_ids);
    fine.adjacency(2, a.k, &simplices)
}
