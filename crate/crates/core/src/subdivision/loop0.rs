//! Loop vertex (0-form) subdivision stencils.
//!
//! Interior odd vertices average the parent edge's endpoints and the two
//! opposite vertices with weights (3/8, 3/8, 1/8, 1/8). Interior even vertices
//! keep weight 1 − nβ(n) and give each neighbor β(n). On the boundary the
//! 1D cubic B-spline rules apply: odd (1/2, 1/2), even (1/8, 3/4, 1/8) over
//! the two neighbors along the boundary, so boundary positions depend only on
//! coarse boundary vertices.

use num::{BigRational, FromPrimitive};

use crate::mesh::TriMesh;
use crate::sparse::Rat;

use super::symval::SymVal;

/// The Loop even-vertex weight β(n), exact where possible.
pub fn loop_beta(n: usize) -> SymVal {
    SymVal::beta_term(n, Rat::from_i64(1).unwrap())
}

/// One stencil row per fine vertex, in fine-vertex order (coarse vertices
/// first, then one odd vertex per canonical coarse edge).
pub fn build_s0_rows(coarse: &TriMesh) -> Vec<Vec<(usize, SymVal)>> {
    let mut rows = Vec::with_capacity(coarse.n_vertices() + coarse.n_edges());
    for v in 0..coarse.n_vertices() {
        rows.push(even_row(coarse, v));
    }
    for e in 0..coarse.n_edges() {
        rows.push(odd_row(coarse, e));
    }
    rows
}

fn even_row(coarse: &TriMesh, v: usize) -> Vec<(usize, SymVal)> {
    if coarse.boundary_vertex[v] {
        let mut row = vec![(v, SymVal::from_ratio(3, 4))];
        for &e in coarse.edges_of_vertex(v) {
            if coarse.boundary_edge[e] {
                let [a, b] = coarse.edges[e];
                let other = if a == v { b } else { a };
                row.push((other, SymVal::from_ratio(1, 8)));
            }
        }
        debug_assert_eq!(row.len(), 3, "boundary vertex has two boundary neighbors");
        row
    } else {
        let n = coarse.vertex_valence(v);
        let beta = loop_beta(n);
        let self_weight = SymVal::from_ratio(1, 1)
            .sub(&beta.scale(&Rat::from_i64(n as i64).unwrap()));
        let mut row = vec![(v, self_weight)];
        for &e in coarse.edges_of_vertex(v) {
            let [a, b] = coarse.edges[e];
            let other = if a == v { b } else { a };
            row.push((other, beta.clone()));
        }
        row
    }
}

fn odd_row(coarse: &TriMesh, e: usize) -> Vec<(usize, SymVal)> {
    let [a, b] = coarse.edges[e];
    if coarse.boundary_edge[e] {
        vec![
            (a, SymVal::from_ratio(1, 2)),
            (b, SymVal::from_ratio(1, 2)),
        ]
    } else {
        let mut row = vec![
            (a, SymVal::from_ratio(3, 8)),
            (b, SymVal::from_ratio(3, 8)),
        ];
        for &f in &coarse.edge_faces[e] {
            let opposite = coarse.faces[f]
                .into_iter()
                .find(|&v| v != a && v != b)
                .expect("triangle has a third vertex");
            row.push((opposite, SymVal::from_ratio(1, 8)));
        }
        row
    }
}

#[allow(dead_code)]
fn as_rat(p: i64, q: i64) -> Rat {
    BigRational::new(p.into(), q.into())
}
