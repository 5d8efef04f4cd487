//! Whitney-form subdivision matrices under midpoint refinement.
//!
//! The coarse Whitney bases are piecewise linear/constant inside the fine
//! space, so each matrix is obtained by evaluating the coarse basis against
//! the fine degrees of freedom: vertex values (k=0), oriented edge integrals
//! (k=1), and face integrals (k=2). All entries are exact rationals; the
//! matrices reproduce the coarse bases exactly, and commute with the incidence
//! matrices by construction.

use num::{BigRational, Zero};

use crate::mesh::TriMesh;
use crate::sparse::{Rat, SpMat};

use super::{EdgeParent, Provenance, RefinementMap};

fn half() -> Rat {
    BigRational::new(1.into(), 2.into())
}

/// k = 0 rows: even fine vertices copy the coarse value, odd fine vertices
/// average the parent edge's endpoints.
pub fn s0_rows(coarse: &TriMesh) -> Vec<Vec<(usize, Rat)>> {
    let mut rows = Vec::with_capacity(coarse.n_vertices() + coarse.n_edges());
    for v in 0..coarse.n_vertices() {
        rows.push(vec![(v, Rat::from_integer(1.into()))]);
    }
    for e in 0..coarse.n_edges() {
        let [a, b] = coarse.edges[e];
        rows.push(vec![(a, half()), (b, half())]);
    }
    rows
}

/// k = 1: row per fine edge, entries are exact integrals of the coarse Whitney
/// edge forms along the (canonically oriented) fine edge.
///
/// Whitney 1-forms are affine inside each face, so the integral over a straight
/// fine edge equals the midpoint value dotted with the chord; in barycentric
/// coordinates, with `λ̄` the midpoint values: the entry for coarse edge
/// `(a, b)` (canonical, a < b) is `λ̄_a (λ_b(q) − λ_b(p)) − λ̄_b (λ_a(q) − λ_a(p))`
/// for the fine edge from `p` to `q`. Every fine edge lies in some coarse face,
/// and only that face's three edge forms have a nonzero tangential trace there.
pub fn s1(coarse: &TriMesh, fine: &TriMesh, map: &RefinementMap) -> SpMat<Rat> {
    let nv = coarse.n_vertices();
    let mut rows = Vec::with_capacity(fine.n_edges());
    for (fe, &[p, q]) in fine.edges.iter().enumerate() {
        // A coarse face containing both endpoints of the fine edge.
        let face = match map.edge_parentage[fe] {
            EdgeParent::Interior(f) => f,
            EdgeParent::HalfOf(e) => coarse.edge_faces[e][0],
        };
        let fverts = coarse.faces[face];
        // Barycentric coordinates (scaled by 2 to stay integral): an even fine
        // vertex sits on a coarse vertex, an odd one on an edge midpoint.
        let bary2 = |fv: usize| -> [i64; 3] {
            let mut c = [0i64; 3];
            match map.vertex_provenance[fv] {
                Provenance::Even(v) => {
                    let li = fverts.iter().position(|&w| w == v).expect("vertex in face");
                    c[li] = 2;
                }
                Provenance::Odd(e) => {
                    for v in coarse.edges[e] {
                        let li = fverts.iter().position(|&w| w == v).expect("edge in face");
                        c[li] = 1;
                    }
                }
            }
            c
        };
        let bp = bary2(p);
        let bq = bary2(q);
        let mut row = Vec::new();
        for (le, &(ce, _)) in coarse.face_edges[face].iter().enumerate() {
            let [ga, gb] = coarse.edges[ce];
            let la = fverts.iter().position(|&w| w == ga).expect("in face");
            let lb = fverts.iter().position(|&w| w == gb).expect("in face");
            // (bp + bq)/2 is the midpoint (scale 2), differences are exact.
            // entry = λ̄_a Δλ_b − λ̄_b Δλ_a with λ = bary2/2.
            let mean_a = bp[la] + bq[la]; // 4·λ̄_a
            let mean_b = bp[lb] + bq[lb];
            let d_a = bq[la] - bp[la]; // 2·Δλ_a
            let d_b = bq[lb] - bp[lb];
            let num = mean_a * d_b - mean_b * d_a; // 8·entry
            if num != 0 {
                row.push((ce, BigRational::new(num.into(), 8.into())));
            }
            let _ = le;
        }
        debug_assert!(!row.is_empty());
        rows.push(row);
    }
    let _ = nv;
    SpMat::from_rows(coarse.n_edges(), rows)
}

/// k = 2: each child face holds a quarter of the parent's integral, since
/// midpoint quadrisection splits a triangle into four children of equal area.
pub fn s2(coarse: &TriMesh, map: &RefinementMap) -> SpMat<Rat> {
    let quarter = BigRational::new(1.into(), 4.into());
    let n_fine = 4 * coarse.n_faces();
    let mut rows = vec![Vec::new(); n_fine];
    for (parent, children) in map.face_children.iter().enumerate() {
        for &c in children {
            rows[c].push((parent, quarter.clone()));
        }
    }
    debug_assert!(rows.iter().all(|r| !r.is_empty()));
    let _ = Rat::zero();
    SpMat::from_rows(coarse.n_faces(), rows)
}
