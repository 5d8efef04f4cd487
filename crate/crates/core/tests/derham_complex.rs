//! Cohomology and commutation verification: incidence-matrix structure,
//! Betti numbers against independent union-find and Euler-characteristic
//! oracles, the relative (zero-trace) complex, accumulated commutation
//! residuals with a corruption detector, and the zero-trace restriction.

use subdforms::derham::{self, DeRhamError};
use subdforms::mesh::{gen, TriMesh};
use subdforms::sparse;
use subdforms::subdivision::{Hierarchy, Scheme};

fn two_triangle_square() -> TriMesh {
    TriMesh::build_2d(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

fn test_meshes() -> Vec<(&'static str, TriMesh)> {
    vec![
        (
            "triangle",
            TriMesh::build_2d(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap(),
        ),
        ("square2", two_triangle_square()),
        (
            "square",
            gen::structured_square(3, [0.0, 0.0], [1.0, 1.0], false),
        ),
        ("disk", gen::disk_mixed_valence()),
        ("annulus", gen::annulus(8, 0.5, 1.0)),
    ]
}

/// Connected components by union-find over edges; an independent oracle for
/// the zeroth Betti number.
fn components(mesh: &TriMesh) -> usize {
    let mut parent: Vec<usize> = (0..mesh.n_vertices()).collect();
    fn find(parent: &mut Vec<usize>, mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for &[a, b] in &mesh.edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    (0..mesh.n_vertices())
        .filter(|&v| find(&mut parent, v) == v)
        .count()
}

#[test]
fn incidence_rows_have_the_required_structure() {
    for (name, mesh) in test_meshes() {
        let d0 = derham::build_d(&mesh, 0);
        for e in 0..mesh.n_edges() {
            let (_, vals) = d0.row(e);
            assert_eq!(vals.len(), 2, "{name}: edge {e}");
            assert_eq!(vals.iter().sum::<i64>(), 0, "{name}: edge row must sum to 0");
            assert!(vals.contains(&1) && vals.contains(&-1));
        }
        let d1 = derham::build_d(&mesh, 1);
        for f in 0..mesh.n_faces() {
            let (_, vals) = d1.row(f);
            assert_eq!(vals.len(), 3, "{name}: face {f}");
            assert!(vals.iter().all(|&v| v == 1 || v == -1));
        }
    }
}

#[test]
fn d_composes_to_zero() {
    for (name, mesh) in test_meshes() {
        let d0 = derham::build_d(&mesh, 0).to_rational();
        let d1 = derham::build_d(&mesh, 1).to_rational();
        assert!(d1.mul(&d0).is_zero_matrix(), "{name}: D¹D⁰ ≠ 0");
        let d0r = derham::build_d_relative(&mesh, 0).to_rational();
        let d1r = derham::build_d_relative(&mesh, 1).to_rational();
        assert!(d1r.mul(&d0r).is_zero_matrix(), "{name}: relative D¹D⁰ ≠ 0");
    }
}

#[test]
fn two_triangle_square_ranks() {
    let mesh = two_triangle_square();
    let d0 = derham::build_d(&mesh, 0).to_f64();
    let d1 = derham::build_d(&mesh, 1).to_f64();
    assert_eq!(sparse::dense_rank(&sparse::to_dense(&d0)), 3);
    assert_eq!(sparse::dense_rank(&sparse::to_dense(&d1)), 2);
}

#[test]
fn betti_matches_topology() {
    // Disks are contractible; the annulus has one loop.
    for (name, mesh, expected) in [
        ("square", gen::structured_square(3, [0.0, 0.0], [1.0, 1.0], false), (1, 0, 0)),
        ("disk", gen::disk_mixed_valence(), (1, 0, 0)),
        ("annulus", gen::annulus(8, 0.5, 1.0), (1, 1, 0)),
    ] {
        let b = derham::betti(&mesh, false).unwrap();
        assert_eq!(b, expected, "{name}: absolute Betti");
    }
}

#[test]
fn relative_betti_matches_lefschetz_duality() {
    // H^k of the relative complex pairs with H_{2−k} of the surface:
    // disks give (0,0,1), the annulus (0,1,1).
    for (name, mesh, expected) in [
        ("square", gen::structured_square(3, [0.0, 0.0], [1.0, 1.0], false), (0, 0, 1)),
        ("disk", gen::disk_mixed_valence(), (0, 0, 1)),
        ("square2", two_triangle_square(), (0, 0, 1)),
        ("annulus", gen::annulus(8, 0.5, 1.0), (0, 1, 1)),
    ] {
        let b = derham::betti(&mesh, true).unwrap();
        assert_eq!(b, expected, "{name}: relative Betti");
    }
}

#[test]
fn betti_agrees_with_union_find_and_euler() {
    for (name, mesh) in test_meshes() {
        let (b0, b1, b2) = derham::betti(&mesh, false).unwrap();
        let b0_oracle = components(&mesh);
        assert_eq!(b0, b0_oracle, "{name}: b0 vs union-find");
        // Open surfaces have vanishing top cohomology, so b1 follows from
        // the Euler characteristic.
        assert_eq!(b2, 0, "{name}: open surface b2");
        let chi = mesh.euler_characteristic();
        assert_eq!(b0 as i64 - b1 as i64 + b2 as i64, chi, "{name}: Euler-Poincaré");
    }
}

#[test]
fn commutation_vanishes_for_midpoint_refinement() {
    let mesh = gen::disk_mixed_valence();
    let h = Hierarchy::build(mesh, 2, Scheme::Whitney).unwrap();
    for k in 0..2usize {
        for from in 0..=2usize {
            for to in from..=2usize {
                let r = derham::check_commutation(&h, k, from, to).unwrap();
                assert_eq!(r, 0.0, "whitney k={k} ({from},{to})");
            }
        }
    }
}

#[test]
fn commutation_is_tight_for_loop_subdivision() {
    let mesh = gen::disk_mixed_valence();
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    for k in 0..2usize {
        let r = derham::check_commutation(&h, k, 0, 2).unwrap();
        assert!(r <= 1e-13, "loop k={k}: residual {r:.3e}");
    }
}

#[test]
fn corrupted_stencil_is_detected() {
    let mesh = gen::disk_mixed_valence();
    let h = Hierarchy::build(mesh, 1, Scheme::LoopWang).unwrap();
    let s0 = &h.per_level_s[0][0].f;
    let mut s1 = h.per_level_s[0][1].f.clone();
    {
        let vals = s1.values_mut();
        vals[vals.len() / 2] += 1e-3;
    }
    let residual = derham::commutation_residual(h.mesh(0), h.mesh(1), s0, &s1, 0);
    assert!(
        residual >= 1e-4,
        "perturbed stencil must be flagged, residual {residual:.3e}"
    );
}

#[test]
fn zero_trace_restriction_keeps_interior_columns() {
    // All faces are interior, so the 2-form restriction removes nothing.
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    let a2 = h.accumulate(2, 0, 2).unwrap();
    let z2 = derham::restrict_zero_trace(&a2, &h).unwrap();
    assert_eq!(z2.f.ncols(), h.mesh(0).n_faces());

    // Edge dofs: the column count is the interior edge count, and every
    // retained column passed the boundary-row scan inside the restriction.
    let a1 = h.accumulate(1, 0, 2).unwrap();
    let z1 = derham::restrict_zero_trace(&a1, &h).unwrap();
    assert_eq!(z1.f.ncols(), h.mesh(0).interior_simplices(1).len());
    assert!(z1.f.ncols() < a1.ncols());
}

#[test]
fn zero_trace_identity_on_the_two_triangle_square() {
    let mesh = two_triangle_square();
    let h = Hierarchy::build(mesh, 0, Scheme::Whitney).unwrap();
    let a1 = h.accumulate(1, 0, 0).unwrap();
    let z = derham::restrict_zero_trace(&a1, &h).unwrap();
    assert_eq!(z.f.ncols(), 1, "only the diagonal edge is interior");
    assert_eq!(z.interior.ids.len(), 1);
}

#[test]
fn boundary_leak_is_reported_for_a_corrupted_matrix() {
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 1, Scheme::LoopWang).unwrap();
    let mut a1 = h.accumulate(1, 0, 1).unwrap();
    // Plant weight connecting an interior coarse edge to a boundary fine
    // edge; the restriction must refuse it.
    let fine = h.mesh(1);
    let boundary_fine = (0..fine.n_edges())
        .find(|&e| fine.is_boundary(1, e))
        .unwrap();
    let interior_coarse = h.mesh(0).interior_simplices(1).ids[0];
    let dense = sparse::to_dense(&a1.f);
    let mut triplets = Vec::new();
    for i in 0..dense.nrows() {
        for j in 0..dense.ncols() {
            if dense[(i, j)] != 0.0 {
                triplets.push((i, j, dense[(i, j)]));
            }
        }
    }
    triplets.push((boundary_fine, interior_coarse, 0.25));
    a1.f = sparse::csr_from_triplets(dense.nrows(), dense.ncols(), triplets);
    match derham::restrict_zero_trace(&a1, &h) {
        Err(DeRhamError::BoundaryLeak { row, .. }) => assert_eq!(row, boundary_fine),
        other => panic!("expected BoundaryLeak, got {other:?}"),
    }
}

#[test]
fn restricted_complex_commutes() {
    // Interior-restricted subdivision and incidence matrices satisfy the
    // same commutation identities as the full complex.
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    let (coarse, fine) = (h.mesh(0), h.mesh(2));
    let a0 = h.accumulate(0, 0, 2).unwrap();
    let a1 = h.accumulate(1, 0, 2).unwrap();
    let a2 = h.accumulate(2, 0, 2).unwrap();
    let s0r = sparse::select(
        &a0.f,
        &fine.interior_simplices(0).ids,
        &coarse.interior_simplices(0).ids,
    );
    let s1r = sparse::select(
        &a1.f,
        &fine.interior_simplices(1).ids,
        &coarse.interior_simplices(1).ids,
    );
    let d0f = derham::build_d_relative(fine, 0).to_f64();
    let d0c = derham::build_d_relative(coarse, 0).to_f64();
    let r0 = sparse::max_abs_diff(&sparse::spgemm(&d0f, &s0r), &sparse::spgemm(&s1r, &d0c));
    assert!(r0 <= 1e-13, "restricted k=0 commutation: {r0:.3e}");

    let d1f = derham::build_d_relative(fine, 1).to_f64();
    let d1c = derham::build_d_relative(coarse, 1).to_f64();
    let r1 = sparse::max_abs_diff(&sparse::spgemm(&d1f, &s1r), &sparse::spgemm(&a2.f, &d1c));
    assert!(r1 <= 1e-13, "restricted k=1 commutation: {r1:.3e}");
}

#[test]
fn hierarchy_report_collects_the_checks() {
    let mesh = gen::disk_mixed_valence();
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    let report = derham::verify_hierarchy(&h).unwrap();
    assert!(report.dd_zero);
    assert!(report.commutation_residual <= 1e-13);
    assert!(report.commutation_exact);
    assert!(!report.betti.is_empty());
    for (b, br) in report.betti.iter().zip(&report.betti_relative) {
        assert_eq!(*b, (1, 0, 0));
        assert_eq!(*br, (0, 0, 1));
    }
}
