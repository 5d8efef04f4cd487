//! Assembly verification: quadrature rules against closed-form monomial
//! integrals, element matrices against analytic values and independent
//! midpoint-rule evaluation, the curl-curl factorization identity, both
//! boundary-elimination routes, and L2 projection sanity cases.

use nalgebra_sparse::CsrMatrix;
use subdforms::fem::{
    self, AnalyticForm, OperatorKind, TriQuadrature,
};
use subdforms::mesh::{gen, TriMesh};
use subdforms::solvers::{LdlFactor, Pivoting};
use subdforms::sparse;
use subdforms::subdivision::{Hierarchy, Scheme};

fn unit_right_triangle() -> TriMesh {
    TriMesh::build_2d(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap()
}

fn scalene_triangle() -> TriMesh {
    TriMesh::build_2d(vec![[0.1, -0.2], [1.3, 0.4], [0.5, 1.7]], vec![[0, 1, 2]]).unwrap()
}

fn two_triangle_square() -> TriMesh {
    TriMesh::build_2d(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

#[test]
fn quadrature_integrates_monomials_exactly() {
    // On the reference triangle (0,0)-(1,0)-(0,1): ∫ x^p y^q = p! q! / (p+q+2)!.
    let mesh = unit_right_triangle();
    let rule_degree = [(TriQuadrature::degree2(), 2), (TriQuadrature::degree6(), 6)];
    for (quad, exact_up_to) in &rule_degree {
        for p in 0..=6usize {
            for q in 0..=(6 - p) {
                if p + q > *exact_up_to {
                    continue;
                }
                let form = AnalyticForm::scalar(0, move |x, y| x.powi(p as i32) * y.powi(q as i32));
                // Integrating against the single DG0 density (1/|f|)∫ f and
                // scaling by |f| gives the plain integral.
                let form2 = AnalyticForm::scalar(2, move |x, y| x.powi(p as i32) * y.powi(q as i32));
                let b = fem::assemble_rhs(&mesh, &form2, quad).unwrap();
                let integral = b[0] * mesh.face_area(0);
                let exact = factorial(p) * factorial(q) / factorial(p + q + 2);
                assert!(
                    (integral - exact).abs() <= 1e-14,
                    "x^{p} y^{q}: got {integral:.16e}, expected {exact:.16e}"
                );
                drop(form);
            }
        }
    }
}

#[test]
fn vertex_mass_matches_the_analytic_element() {
    // |T| = 1/2, so the element matrix is (1/2)/12 · [[2,1,1],[1,2,1],[1,1,2]].
    let mesh = unit_right_triangle();
    let m = fem::assemble_mass(&mesh, 0, 0).unwrap();
    let d = sparse::to_dense(&m.matrix);
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { 1.0 / 12.0 } else { 1.0 / 24.0 };
            assert!((d[(i, j)] - expected).abs() < 1e-16, "entry ({i},{j})");
        }
    }
}

#[test]
fn density_mass_is_inverse_areas() {
    let mesh = gen::structured_square(3, [0.0, 0.0], [2.0, 1.0], true);
    let m = fem::assemble_mass(&mesh, 2, 0).unwrap();
    let d = sparse::to_dense(&m.matrix);
    for f in 0..mesh.n_faces() {
        for g in 0..mesh.n_faces() {
            let expected = if f == g { 1.0 / mesh.face_area(f) } else { 0.0 };
            assert!((d[(f, g)] - expected).abs() < 1e-14);
        }
    }
}

/// Independent edge-element oracle: evaluates the canonical Whitney basis at
/// the three edge midpoints with its own gradient formulas and applies the
/// degree-2 midpoint rule.
fn edge_mass_midpoint_oracle(mesh: &TriMesh) -> Vec<Vec<f64>> {
    let ne = mesh.n_edges();
    let mut m = vec![vec![0.0f64; ne]; ne];
    for f in 0..mesh.n_faces() {
        let [v0, v1, v2] = mesh.faces[f];
        let p = |v: usize| [mesh.positions[v][0], mesh.positions[v][1]];
        let (p0, p1, p2) = (p(v0), p(v1), p(v2));
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let area = 0.5 * det.abs();
        // Barycentric gradients by direct inversion of the affine map.
        let grad = [
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ];
        let locals = [v0, v1, v2];
        let local_of = |v: usize| locals.iter().position(|&u| u == v).unwrap();
        let midpoints = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        for &(e1, _) in &mesh.face_edges[f] {
            let [a1, b1] = mesh.edges[e1].map(local_of);
            for &(e2, _) in &mesh.face_edges[f] {
                let [a2, b2] = mesh.edges[e2].map(local_of);
                let mut acc = 0.0;
                for bary in midpoints {
                    let w1 = [
                        bary[a1] * grad[b1][0] - bary[b1] * grad[a1][0],
                        bary[a1] * grad[b1][1] - bary[b1] * grad[a1][1],
                    ];
                    let w2 = [
                        bary[a2] * grad[b2][0] - bary[b2] * grad[a2][0],
                        bary[a2] * grad[b2][1] - bary[b2] * grad[a2][1],
                    ];
                    acc += (w1[0] * w2[0] + w1[1] * w2[1]) / 3.0;
                }
                m[e1][e2] += area * acc;
            }
        }
    }
    m
}

#[test]
fn edge_mass_matches_the_midpoint_oracle() {
    for mesh in [
        scalene_triangle(),
        two_triangle_square(),
        gen::disk_mixed_valence(),
    ] {
        let assembled = fem::assemble_mass(&mesh, 1, 0).unwrap();
        let oracle = edge_mass_midpoint_oracle(&mesh);
        let d = sparse::to_dense(&assembled.matrix);
        let mut max_diff = 0.0f64;
        for e1 in 0..mesh.n_edges() {
            for e2 in 0..mesh.n_edges() {
                max_diff = max_diff.max((d[(e1, e2)] - oracle[e1][e2]).abs());
            }
        }
        assert!(max_diff < 1e-15, "closed form vs midpoint rule: {max_diff:.3e}");
    }
}

#[test]
fn mass_matrices_do_not_depend_on_the_quadrature_rule() {
    let mesh = gen::disk_mixed_valence();
    for k in [0usize, 1] {
        let closed = fem::assemble_mass(&mesh, k, 0).unwrap();
        let q2 = fem::assemble_mass_quadrature(&mesh, k, 0, &TriQuadrature::degree2()).unwrap();
        let q6 = fem::assemble_mass_quadrature(&mesh, k, 0, &TriQuadrature::degree6()).unwrap();
        let scale = sparse::max_abs(&closed.matrix);
        assert!(sparse::max_abs_diff(&closed.matrix, &q2.matrix) <= 1e-14 * scale, "k={k} degree2");
        assert!(sparse::max_abs_diff(&closed.matrix, &q6.matrix) <= 1e-14 * scale, "k={k} degree6");
    }
}

#[test]
fn mass_matrices_are_positive_definite() {
    let mesh = gen::disk_mixed_valence();
    for k in [0usize, 1, 2] {
        let m = fem::assemble_mass(&mesh, k, 0).unwrap();
        assert!(
            LdlFactor::factor(&m.matrix, Pivoting::RequireSpd).is_ok(),
            "k={k} mass must be SPD"
        );
    }
}

#[test]
fn curlcurl_factors_through_the_density_mass() {
    for mesh in [
        two_triangle_square(),
        gen::structured_square(3, [0.0, 0.0], [1.0, 1.0], false),
        gen::disk_mixed_valence(),
        gen::annulus(8, 0.5, 1.0),
    ] {
        let c = fem::assemble_curlcurl(&mesh, 0).unwrap();
        assert_eq!(c.kind, OperatorKind::CurlCurl);
        let m2 = fem::assemble_mass(&mesh, 2, 0).unwrap();
        let d1: CsrMatrix<f64> = subdforms::derham::build_d(&mesh, 1).to_f64();
        let product = sparse::congruence(&d1, &m2.matrix);
        let scale = sparse::max_abs(&c.matrix);
        assert!(
            sparse::max_abs_diff(&c.matrix, &product) <= 1e-14 * scale,
            "curl-curl must equal D¹ᵀ M² D¹"
        );
    }
}

#[test]
fn curlcurl_annihilates_gradients() {
    let mesh = gen::disk_mixed_valence();
    let c = fem::assemble_curlcurl(&mesh, 0).unwrap();
    let d0: CsrMatrix<f64> = subdforms::derham::build_d(&mesh, 0).to_f64();
    // An arbitrary but deterministic 0-form.
    let x: Vec<f64> = (0..mesh.n_vertices()).map(|i| (i as f64 * 0.7).sin()).collect();
    let mut grad = vec![0.0f64; mesh.n_edges()];
    sparse::matvec(&d0, &x, &mut grad);
    let mut cg = vec![0.0f64; mesh.n_edges()];
    sparse::matvec(&c.matrix, &grad, &mut cg);
    let max = cg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max <= 1e-13, "C · D⁰x = {max:.3e}");
}

#[test]
fn single_triangle_curlcurl_has_rank_one() {
    let mesh = unit_right_triangle();
    let c = fem::assemble_curlcurl(&mesh, 0).unwrap();
    let rank = sparse::dense_rank(&sparse::to_dense(&c.matrix));
    assert_eq!(rank, 1);
}

#[test]
fn unrefine_with_identity_returns_the_input() {
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 2, Scheme::Whitney).unwrap();
    let m = fem::assemble_mass(h.mesh(2), 1, 2).unwrap();
    let a = h.accumulate(1, 2, 2).unwrap();
    let back = fem::unrefine(&m, &a).unwrap();
    assert_eq!(
        sparse::max_abs_diff(&m.matrix, &back.matrix),
        0.0,
        "identity unrefinement must be bitwise"
    );
}

#[test]
fn whitney_unrefinement_reproduces_the_coarse_mass() {
    // Midpoint refinement spans nested piecewise-linear spaces, so AᵀM_L A
    // is the coarse mass matrix exactly.
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 3, Scheme::Whitney).unwrap();
    for k in [0usize, 1, 2] {
        for l in 0..3usize {
            let fine = fem::assemble_mass(h.mesh(3), k, 3).unwrap();
            let a = h.accumulate(k, l, 3).unwrap();
            let coarse = fem::unrefine(&fine, &a).unwrap();
            let direct = fem::assemble_mass(h.mesh(l), k, l).unwrap();
            let scale = sparse::max_abs(&direct.matrix);
            let diff = sparse::max_abs_diff(&coarse.matrix, &direct.matrix);
            assert!(
                diff <= 1e-13 * scale.max(1.0),
                "k={k}, l={l}: AᵀM_LA vs M_l differ by {diff:.3e}"
            );
        }
    }
}

#[test]
fn unrefined_operators_densify() {
    let mesh = gen::structured_square(4, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    let fine = fem::assemble_mass(h.mesh(2), 1, 2).unwrap();
    let a = h.accumulate(1, 0, 2).unwrap();
    let coarse = fem::unrefine(&fine, &a).unwrap();
    let density = |m: &CsrMatrix<f64>| m.nnz() as f64 / (m.nrows() * m.ncols()) as f64;
    assert!(
        density(&coarse.matrix) > density(&fine.matrix),
        "unrefined operator must be denser"
    );
}

#[test]
fn unrefine_rejects_degree_mismatch() {
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 1, Scheme::Whitney).unwrap();
    let m = fem::assemble_mass(h.mesh(1), 0, 1).unwrap();
    let a1 = h.accumulate(1, 0, 1).unwrap();
    assert!(matches!(
        fem::unrefine(&m, &a1),
        Err(fem::FemError::DimensionMismatch { .. })
    ));
}

#[test]
fn two_triangle_square_keeps_one_interior_edge() {
    let mesh = two_triangle_square();
    let c = fem::assemble_curlcurl(&mesh, 0).unwrap();
    let interior = mesh.interior_simplices(1);
    let restricted = fem::eliminate_boundary(&c, &interior.ids).unwrap();
    assert_eq!(restricted.n_dofs(), 1);
    assert!(restricted.zero_trace);
}

#[test]
fn face_elimination_is_the_identity() {
    let mesh = gen::disk_mixed_valence();
    let m = fem::assemble_mass(&mesh, 2, 0).unwrap();
    let interior = mesh.interior_simplices(2);
    let restricted = fem::eliminate_boundary(&m, &interior.ids).unwrap();
    assert_eq!(restricted.n_dofs(), mesh.n_faces());
    assert_eq!(sparse::max_abs_diff(&m.matrix, &restricted.matrix), 0.0);
}

#[test]
fn elimination_routes_agree_on_a_square_hierarchy() {
    // Route one: unrefine the fine operator, then delete boundary rows and
    // columns at the coarse level. Route two: restrict the subdivision
    // matrix to interior coarse columns before the congruence.
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 3, Scheme::LoopWang).unwrap();
    let (l, fine_level) = (1usize, 3usize);
    let fine = fem::assemble_curlcurl(h.mesh(fine_level), fine_level).unwrap();
    let a = h.accumulate(1, l, fine_level).unwrap();
    let interior = h.mesh(l).interior_simplices(1);

    let route_one = {
        let coarse = fem::unrefine(&fine, &a).unwrap();
        fem::eliminate_boundary(&coarse, &interior.ids).unwrap()
    };
    let route_two = {
        let all_rows: Vec<usize> = (0..a.nrows()).collect();
        let restricted = sparse::select(&a.f, &all_rows, &interior.ids);
        sparse::congruence(&restricted, &fine.matrix)
    };
    let scale = sparse::max_abs(&route_one.matrix).max(1.0);
    let diff = sparse::max_abs_diff(&route_one.matrix, &route_two);
    assert!(diff <= 1e-14 * scale, "routes differ by {diff:.3e}");
}

#[test]
fn empty_interior_is_reported() {
    let mesh = unit_right_triangle();
    let m = fem::assemble_mass(&mesh, 1, 0).unwrap();
    let interior = mesh.interior_simplices(1);
    assert!(interior.ids.is_empty());
    assert!(matches!(
        fem::eliminate_boundary(&m, &interior.ids),
        Err(fem::FemError::EmptyInterior)
    ));
}

#[test]
fn projection_reproduces_constants() {
    let mesh = gen::structured_square(2, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 2, Scheme::LoopWang).unwrap();
    // Constant scalar: hats partition unity at every level.
    let one = AnalyticForm::scalar(0, |_, _| 1.0);
    let p = fem::project_l2(&h, 0, 2, &one).unwrap();
    assert!(p.error <= 1e-12, "constant 0-form error {0:.3e}", p.error);
    // Constant vector field: preserved by the 1-form subdivision rules.
    let c = AnalyticForm::vector(|_, _| [0.75, -0.4]);
    let p = fem::project_l2(&h, 0, 2, &c).unwrap();
    assert!(p.error <= 1e-10, "constant 1-form error {0:.3e}", p.error);
}

#[test]
fn projection_error_shrinks_with_nested_spaces() {
    // At a fixed assembly level, raising the coefficient level enlarges the
    // space, so the projection error cannot grow.
    let mesh = gen::structured_square(4, [0.0, 0.0], [1.0, 1.0], false);
    let h = Hierarchy::build(mesh, 3, Scheme::LoopWang).unwrap();
    for form in [
        AnalyticForm::study_scalar(0),
        AnalyticForm::study_one_form(),
        AnalyticForm::study_scalar(2),
    ] {
        let mut previous = f64::INFINITY;
        for l in 0..=3usize {
            let p = fem::project_l2(&h, l, 3, &form).unwrap();
            assert!(
                p.error <= previous * (1.0 + 1e-12),
                "k={}: error grew from {previous:.6e} to {:.6e} at l={l}",
                form.k(),
                p.error
            );
            previous = p.error;
        }
    }
}

#[test]
fn study_forms_match_their_formulas() {
    let s = AnalyticForm::study_scalar(0);
    // sin(4π/8) + e^1 at (1/8, 1/2).
    let expected = (std::f64::consts::PI * 0.5).sin() + 1.0f64.exp();
    assert!((s.eval_scalar(0.125, 0.5) - expected).abs() < 1e-15);
    let v = AnalyticForm::study_one_form();
    let got = v.eval_vector(0.125, 0.125);
    // sin(π/4)cos(π/4) = 1/2; −cos(π/4)sin(π/4) = −1/2.
    assert!((got[0] - 0.5).abs() < 1e-15);
    assert!((got[1] + 0.5).abs() < 1e-15);
    let vs = AnalyticForm::study_one_form_symmetric();
    let got = vs.eval_vector(0.125, 0.25);
    assert!((got[0] - (0.25 * std::f64::consts::PI).sin() * (0.5 * std::f64::consts::PI).cos()).abs() < 1e-15);
}
