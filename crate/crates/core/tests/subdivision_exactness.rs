//! Exactness of the subdivision matrices: commutation with the incidence
//! operators, partition of unity, and boundary locality.

use subdforms::derham;
use subdforms::mesh::{gen, TriMesh};
use subdforms::subdivision::{Hierarchy, Scheme};

fn single_triangle() -> TriMesh {
    TriMesh::build_2d(
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        vec![[0, 1, 2]],
    )
    .unwrap()
}

fn two_triangle_square() -> TriMesh {
    gen::structured_square(1, [0.0, 0.0], [1.0, 1.0], false)
}

/// Structural checks shared by every hierarchy test.
fn check_hierarchy(h: &Hierarchy) {
    for l in 0..h.top_level() {
        let coarse = h.mesh(l);
        let fine = h.mesh(l + 1);
        for k in 0..2usize {
            let sk = &h.per_level_s[l][k];
            let sk1 = &h.per_level_s[l][k + 1];
            match (sk.exact.as_ref(), sk1.exact.as_ref()) {
                (Some(ek), Some(ek1)) => {
                    assert!(
                        derham::commutation_exact(coarse, fine, ek, ek1, k),
                        "commutation fails exactly at level {l}, degree {k}"
                    );
                }
                _ => {
                    let r = derham::commutation_residual(coarse, fine, &sk.f, &sk1.f, k);
                    assert!(
                        r < 1e-12,
                        "commutation residual {r:e} at level {l}, degree {k}"
                    );
                }
            }
        }
        // Partition of unity for vertex rows; face rows sum to 1/4 (the four
        // children together carry the parent's unit integral, so the
        // density-value scheme 4 S^2 preserves constants).
        for (k, expect) in [(0usize, 1.0), (2, 0.25)] {
            let s = &h.per_level_s[l][k];
            for row in s.f.row_iter() {
                let sum: f64 = row.values().iter().sum();
                assert!(
                    (sum - expect).abs() < 1e-13,
                    "S^{k} row sum {sum} at level {l}"
                );
            }
        }
        // Boundary locality: rows of boundary fine simplices only touch
        // boundary coarse simplices.
        for k in 0..3usize {
            let s = &h.per_level_s[l][k];
            for (r, row) in s.f.row_iter().enumerate() {
                if !fine.is_boundary(k, r) {
                    continue;
                }
                for &c in row.col_indices() {
                    assert!(
                        coarse.is_boundary(k, c),
                        "boundary fine {k}-simplex {r} references interior coarse {c} at level {l}"
                    );
                }
            }
        }
    }
}

#[test]
fn loop_hierarchy_single_triangle() {
    let h = Hierarchy::build(single_triangle(), 2, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
    for l in 0..2 {
        assert!(h.per_level_s[l][1].exact.is_some(), "rational at level {l}");
    }
}

#[test]
fn loop_hierarchy_two_triangles() {
    let h = Hierarchy::build(two_triangle_square(), 2, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
}

#[test]
fn loop_hierarchy_structured_square() {
    let m = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(m, 2, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
    // Interior valences are all 6, so every weight is rational.
    for l in 0..2 {
        for k in 0..3 {
            assert!(h.per_level_s[l][k].exact.is_some());
        }
    }
}

#[test]
fn loop_hierarchy_alternating_square() {
    let m = gen::structured_square(3, [0.0, 0.0], [2.0, 1.0], true);
    let h = Hierarchy::build(m, 1, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
}

#[test]
fn loop_hierarchy_mixed_valence_disk() {
    let m = gen::disk_mixed_valence();
    let h = Hierarchy::build(m, 1, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
    // Valences 5, 7, 8 appear, so the 0-form weights are irrational and the
    // exact-rational form must be absent.
    assert!(h.per_level_s[0][0].exact.is_none());
}

#[test]
fn loop_hierarchy_annulus() {
    let m = gen::annulus(8, 0.5, 1.0);
    let h = Hierarchy::build(m, 1, Scheme::LoopWang).unwrap();
    check_hierarchy(&h);
}

#[test]
fn whitney_hierarchy_structured_square() {
    let m = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(m, 2, Scheme::Whitney).unwrap();
    check_hierarchy(&h);
    for l in 0..2 {
        for k in 0..3 {
            assert!(h.per_level_s[l][k].exact.is_some());
        }
    }
}

#[test]
fn whitney_hierarchy_mixed_valence_disk() {
    let h = Hierarchy::build(gen::disk_mixed_valence(), 1, Scheme::Whitney).unwrap();
    check_hierarchy(&h);
}
