//! Finite element assembly on triangle meshes: mass matrices for the three
//! lowest-order form spaces, the curl-curl stiffness matrix, quadrature
//! rules, and L2 projection.
//!
//! The three spaces are continuous piecewise-linear hats (0-forms), lowest
//! order edge elements on canonically oriented edges (1-forms), and
//! piecewise-constant densities normalized to unit integral (2-forms). The
//! density normalization makes the curl of an edge function exactly the
//! signed density of its adjacent faces, so the exterior derivative matrices
//! stay ±1 integers and the curl-curl matrix factors exactly through the
//! 2-form mass matrix.
//!
//! Coarse subdivision spaces are handled by congruence: an operator
//! assembled on the fine mesh is pulled back through a subdivision matrix
//! (`AᵀXA`), and L2 projection onto the coarse space only ever evaluates
//! fine-level basis functions, so no subdivision limit functions are sampled
//! pointwise.
//!
//! # Expected invariants
//! - Assembled matrices are symmetric to 1e-14 relative; mass matrices are
//!   positive definite and the curl-curl matrix positive semidefinite.
//! - The curl-curl matrix equals `D¹ᵀ M² D¹` exactly, entry by entry.
//! - Mass matrices are independent of the quadrature rule beyond polynomial
//!   degree 2; the closed-form element integrals match quadrature to 1e-14.
//! - Unrefining with the identity subdivision matrix returns the input
//!   matrix bitwise; both boundary-elimination routes (submatrix extraction
//!   and column-restricted subdivision) agree to 1e-14.

use nalgebra_sparse::CsrMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::TriMesh;
use crate::solvers::{self, SolverError};
use crate::sparse;
use crate::subdivision::{Hierarchy, SubdivisionError, SubdivisionMatrix};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("degenerate element: face {face} has area {area:.3e}")]
    DegenerateElement { face: usize, area: f64 },
    #[error("unsupported form degree {k} (expected 0, 1, or 2)")]
    UnsupportedDegree { k: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("no interior degrees of freedom remain after elimination")]
    EmptyInterior,
    #[error(transparent)]
    Subdivision(#[from] SubdivisionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

// ---------------------------------------------------------------------------
// Quadrature.
// ---------------------------------------------------------------------------

/// Symmetric quadrature rule on a triangle: barycentric points with weights
/// that sum to one, so the integral of `g` is `|T| · Σ wᵢ g(xᵢ)`.
#[derive(Debug, Clone)]
pub struct TriQuadrature {
    pub points: Vec<([f64; 3], f64)>,
}

impl TriQuadrature {
    /// Edge-midpoint rule, exact for quadratics.
    pub fn degree2() -> Self {
        let h = 0.5;
        TriQuadrature {
            points: vec![
                ([h, h, 0.0], 1.0 / 3.0),
                ([0.0, h, h], 1.0 / 3.0),
                ([h, 0.0, h], 1.0 / 3.0),
            ],
        }
    }

    /// Twelve-point symmetric rule, exact for polynomials of degree six.
    pub fn degree6() -> Self {
        let mut points = Vec::with_capacity(12);
        let push3 = |points: &mut Vec<([f64; 3], f64)>, a: f64, b: f64, w: f64| {
            points.push(([a, b, b], w));
            points.push(([b, a, b], w));
            points.push(([b, b, a], w));
        };
        let push6 = |points: &mut Vec<([f64; 3], f64)>, a: f64, b: f64, c: f64, w: f64| {
            points.push(([a, b, c], w));
            points.push(([a, c, b], w));
            points.push(([b, a, c], w));
            points.push(([b, c, a], w));
            points.push(([c, a, b], w));
            points.push(([c, b, a], w));
        };
        push3(
            &mut points,
            0.873_821_971_016_996,
            0.063_089_014_491_502,
            0.050_844_906_370_207,
        );
        push3(
            &mut points,
            0.501_426_509_658_179,
            0.249_286_745_170_910,
            0.116_786_275_726_379,
        );
        push6(
            &mut points,
            0.636_502_499_121_399,
            0.310_352_451_033_785,
            0.053_145_049_844_816,
            0.082_851_075_618_374,
        );
        let total: f64 = points.iter().map(|&(_, w)| w).sum();
        for (_, w) in &mut points {
            *w /= total;
        }
        TriQuadrature { points }
    }

    /// Smallest built-in rule exact at the requested polynomial degree.
    pub fn for_degree(degree: usize) -> Self {
        if degree <= 2 {
            Self::degree2()
        } else {
            Self::degree6()
        }
    }
}

// ---------------------------------------------------------------------------
// Analytic forms.
// ---------------------------------------------------------------------------

/// A smooth differential form given by its vector proxy: a scalar field for
/// degrees 0 and 2, a plane vector field for degree 1.
pub struct AnalyticForm {
    k: usize,
    scalar: Option<Box<dyn Fn(f64, f64) -> f64 + Sync + Send>>,
    vector: Option<Box<dyn Fn(f64, f64) -> [f64; 2] + Sync + Send>>,
    /// Polynomial degree the assembly quadrature should resolve.
    pub quadrature_degree: usize,
}

impl AnalyticForm {
    pub fn scalar(k: usize, f: impl Fn(f64, f64) -> f64 + Sync + Send + 'static) -> Self {
        assert!(k == 0 || k == 2, "scalar proxies represent 0- and 2-forms");
        AnalyticForm {
            k,
            scalar: Some(Box::new(f)),
            vector: None,
            quadrature_degree: 6,
        }
    }

    pub fn vector(f: impl Fn(f64, f64) -> [f64; 2] + Sync + Send + 'static) -> Self {
        AnalyticForm {
            k: 1,
            scalar: None,
            vector: Some(Box::new(f)),
            quadrature_degree: 6,
        }
    }

    /// Scalar benchmark field `sin(4πx) + e^{2y}`, used for both the 0-form
    /// and the 2-form approximation studies.
    pub fn study_scalar(k: usize) -> Self {
        Self::scalar(k, |x, y| (4.0 * std::f64::consts::PI * x).sin() + (2.0 * y).exp())
    }

    /// Vector benchmark field
    /// `[sin(2πx)cos(2πx), −cos(2πx)sin(2πy)]`.
    pub fn study_one_form() -> Self {
        use std::f64::consts::PI;
        Self::vector(|x, y| {
            [
                (2.0 * PI * x).sin() * (2.0 * PI * x).cos(),
                -(2.0 * PI * x).cos() * (2.0 * PI * y).sin(),
            ]
        })
    }

    /// Variant of [`AnalyticForm::study_one_form`] with `cos(2πy)` in the
    /// first component, making the field symmetric under swapping x and y.
    pub fn study_one_form_symmetric() -> Self {
        use std::f64::consts::PI;
        Self::vector(|x, y| {
            [
                (2.0 * PI * x).sin() * (2.0 * PI * y).cos(),
                -(2.0 * PI * x).cos() * (2.0 * PI * y).sin(),
            ]
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eval_scalar(&self, x: f64, y: f64) -> f64 {
        (self.scalar.as_ref().expect("scalar proxy"))(x, y)
    }

    pub fn eval_vector(&self, x: f64, y: f64) -> [f64; 2] {
        (self.vector.as_ref().expect("vector proxy"))(x, y)
    }
}

// ---------------------------------------------------------------------------
// Assembled operators.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    /// Mass matrix of the degree-k form space.
    Mass(usize),
    /// Curl-curl stiffness matrix on the 1-form space.
    CurlCurl,
}

impl OperatorKind {
    /// Form degree of the row and column dofs.
    pub fn dof_degree(self) -> usize {
        match self {
            OperatorKind::Mass(k) => k,
            OperatorKind::CurlCurl => 1,
        }
    }
}

/// Which discrete space the operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpaceTag {
    /// The full finite element space at a mesh level.
    Feec { level: usize },
    /// The subdivision subspace with coefficients at `coarse`, assembled at
    /// `fine`.
    Subdiv { coarse: usize, fine: usize },
}

/// A symmetric Galerkin matrix together with its dof bookkeeping.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub kind: OperatorKind,
    pub space: SpaceTag,
    /// Whether boundary dofs have been eliminated.
    pub zero_trace: bool,
    pub matrix: CsrMatrix<f64>,
    /// Simplex ids (at the coefficient level) backing each row and column.
    pub dofs: Vec<usize>,
}

impl AssembledOperator {
    pub fn n_dofs(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Signed area of a face and the (constant) barycentric gradients of its
/// three vertices, in face-local vertex order.
fn face_gradients(mesh: &TriMesh, f: usize) -> Result<(f64, [[f64; 2]; 3]), FemError> {
    let [v0, v1, v2] = mesh.faces[f];
    let p = |v: usize| [mesh.positions[v][0], mesh.positions[v][1]];
    let (p0, p1, p2) = (p(v0), p(v1), p(v2));
    let area = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]));
    let bb = mesh.bbox();
    let scale = (bb.1[0] - bb.0[0]).max(bb.1[1] - bb.0[1]).max(1.0);
    if area.abs() <= 1e-14 * scale * scale {
        return Err(FemError::DegenerateElement { face: f, area });
    }
    let rot = |a: [f64; 2], b: [f64; 2]| [-(b[1] - a[1]), b[0] - a[0]];
    let grads = [rot(p1, p2), rot(p2, p0), rot(p0, p1)];
    let grads = grads.map(|g| [g[0] / (2.0 * area), g[1] / (2.0 * area)]);
    Ok((area, grads))
}

/// Local vertex index of `v` within face `f`.
fn local_index(mesh: &TriMesh, f: usize, v: usize) -> usize {
    mesh.faces[f]
        .iter()
        .position(|&u| u == v)
        .expect("vertex belongs to its face")
}

fn symmetrize_check(m: &CsrMatrix<f64>) {
    debug_assert!(
        sparse::max_abs_diff(m, &m.transpose()) <= 1e-14 * sparse::max_abs(m).max(1.0),
        "assembled operator must be symmetric"
    );
}

/// Assembles the mass matrix of the degree-k space on `mesh` by closed-form
/// element integrals. `level` is recorded in the space tag.
pub fn assemble_mass(mesh: &TriMesh, k: usize, level: usize) -> Result<AssembledOperator, FemError> {
    let n = match k {
        0 => mesh.n_vertices(),
        1 => mesh.n_edges(),
        2 => mesh.n_faces(),
        _ => return Err(FemError::UnsupportedDegree { k }),
    };
    let per_face = crate::par::map_range(mesh.n_faces(), |f| -> Result<Vec<(usize, usize, f64)>, FemError> {
        let (area, grads) = face_gradients(mesh, f)?;
        let t = area.abs();
        let mut out = Vec::with_capacity(9);
        match k {
            0 => {
                // ∫ λ_i λ_j = |T| (1 + δ_ij) / 12.
                for (a, &va) in mesh.faces[f].iter().enumerate() {
                    for (b, &vb) in mesh.faces[f].iter().enumerate() {
                        let w = t / 12.0 * if a == b { 2.0 } else { 1.0 };
                        out.push((va, vb, w));
                    }
                }
            }
            1 => {
                let g = |a: usize, b: usize| {
                    grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]
                };
                let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                for &(e1, _) in &mesh.face_edges[f] {
                    let [i, j] = mesh.edges[e1].map(|v| local_index(mesh, f, v));
                    for &(e2, _) in &mesh.face_edges[f] {
                        let [kk, l] = mesh.edges[e2].map(|v| local_index(mesh, f, v));
                        let val = t / 12.0
                            * ((1.0 + d(i, kk)) * g(j, l) - (1.0 + d(i, l)) * g(j, kk)
                                - (1.0 + d(j, kk)) * g(i, l)
                                + (1.0 + d(j, l)) * g(i, kk));
                        out.push((e1, e2, val));
                    }
                }
            }
            _ => {
                // Unit-integral density: ∫ (χ_f / |f|)² = 1 / |f|.
                out.push((f, f, 1.0 / t));
            }
        }
        Ok(out)
    });
    let mut triplets = Vec::with_capacity(9 * mesh.n_faces());
    for face_triplets in per_face {
        triplets.extend(face_triplets?);
    }
    let matrix = sparse::csr_from_triplets(n, n, triplets);
    symmetrize_check(&matrix);
    Ok(AssembledOperator {
        kind: OperatorKind::Mass(k),
        space: SpaceTag::Feec { level },
        zero_trace: false,
        matrix,
        dofs: (0..n).collect(),
    })
}

/// Assembles the mass matrix by numerical quadrature instead of closed-form
/// integrals; used to cross-check [`assemble_mass`].
pub fn assemble_mass_quadrature(
    mesh: &TriMesh,
    k: usize,
    level: usize,
    quad: &TriQuadrature,
) -> Result<AssembledOperator, FemError> {
    let n = match k {
        0 => mesh.n_vertices(),
        1 => mesh.n_edges(),
        2 => mesh.n_faces(),
        _ => return Err(FemError::UnsupportedDegree { k }),
    };
    let mut triplets = Vec::new();
    for f in 0..mesh.n_faces() {
        let (area, grads) = face_gradients(mesh, f)?;
        let t = area.abs();
        match k {
            0 => {
                for &(bary, w) in &quad.points {
                    for (a, &va) in mesh.faces[f].iter().enumerate() {
                        for (b, &vb) in mesh.faces[f].iter().enumerate() {
                            triplets.push((va, vb, w * t * bary[a] * bary[b]));
                        }
                    }
                }
            }
            1 => {
                let whitney = |e: usize, bary: [f64; 3]| -> [f64; 2] {
                    let [i, j] = mesh.edges[e].map(|v| local_index(mesh, f, v));
                    [
                        bary[i] * grads[j][0] - bary[j] * grads[i][0],
                        bary[i] * grads[j][1] - bary[j] * grads[i][1],
                    ]
                };
                for &(bary, w) in &quad.points {
                    for &(e1, _) in &mesh.face_edges[f] {
                        let w1 = whitney(e1, bary);
                        for &(e2, _) in &mesh.face_edges[f] {
                            let w2 = whitney(e2, bary);
                            triplets.push((e1, e2, w * t * (w1[0] * w2[0] + w1[1] * w2[1])));
                        }
                    }
                }
            }
            _ => {
                triplets.push((f, f, 1.0 / t));
            }
        }
    }
    let matrix = sparse::csr_from_triplets(n, n, triplets);
    Ok(AssembledOperator {
        kind: OperatorKind::Mass(k),
        space: SpaceTag::Feec { level },
        zero_trace: false,
        matrix,
        dofs: (0..n).collect(),
    })
}

/// Assembles the curl-curl stiffness matrix on the edge-element space. The
/// curl of an edge function is the constant `σ_{e,f} / |f|` on each adjacent
/// face, so the element block is `(1/|f|)·ssᵀ` over the face's signed edge
/// triple and the global matrix equals `D¹ᵀ·M²·D¹` exactly.
pub fn assemble_curlcurl(mesh: &TriMesh, level: usize) -> Result<AssembledOperator, FemError> {
    let n = mesh.n_edges();
    let per_face = crate::par::map_range(mesh.n_faces(), |f| -> Result<Vec<(usize, usize, f64)>, FemError> {
        let (area, _) = face_gradients(mesh, f)?;
        let t = area.abs();
        let mut out = Vec::with_capacity(9);
        for &(e1, s1) in &mesh.face_edges[f] {
            for &(e2, s2) in &mesh.face_edges[f] {
                out.push((e1, e2, f64::from(s1) * f64::from(s2) / t));
            }
        }
        Ok(out)
    });
    let mut triplets = Vec::with_capacity(9 * mesh.n_faces());
    for face_triplets in per_face {
        triplets.extend(face_triplets?);
    }
    let matrix = sparse::csr_from_triplets(n, n, triplets);
    symmetrize_check(&matrix);
    Ok(AssembledOperator {
        kind: OperatorKind::CurlCurl,
        space: SpaceTag::Feec { level },
        zero_trace: false,
        matrix,
        dofs: (0..n).collect(),
    })
}

/// Pulls a fine-level operator back onto a coarse subdivision space:
/// `AᵀXA`, with the dof degree of `X` matching the degree of `A` (the
/// curl-curl matrix unrefines with the 1-form subdivision matrix).
pub fn unrefine(
    x: &AssembledOperator,
    a: &SubdivisionMatrix,
) -> Result<AssembledOperator, FemError> {
    if x.kind.dof_degree() != a.k {
        return Err(FemError::DimensionMismatch {
            context: format!(
                "operator dofs have degree {}, subdivision matrix degree {}",
                x.kind.dof_degree(),
                a.k
            ),
        });
    }
    if x.zero_trace || x.dofs.len() != x.matrix.nrows() {
        return Err(FemError::DimensionMismatch {
            context: "unrefinement expects the full (uneliminated) operator".to_string(),
        });
    }
    let fine_level = match x.space {
        SpaceTag::Feec { level } => level,
        SpaceTag::Subdiv { .. } => {
            return Err(FemError::DimensionMismatch {
                context: "operator is already on a subdivision space".to_string(),
            });
        }
    };
    if a.to_level != fine_level || a.nrows() != x.matrix.nrows() {
        return Err(FemError::DimensionMismatch {
            context: format!(
                "subdivision matrix maps level {} to {} ({} rows), operator lives at level {} ({} dofs)",
                a.from_level,
                a.to_level,
                a.nrows(),
                fine_level,
                x.matrix.nrows()
            ),
        });
    }
    let matrix = sparse::congruence(&a.f, &x.matrix);
    symmetrize_check(&matrix);
    Ok(AssembledOperator {
        kind: x.kind,
        space: SpaceTag::Subdiv {
            coarse: a.from_level,
            fine: fine_level,
        },
        zero_trace: false,
        matrix,
        dofs: (0..a.ncols()).collect(),
    })
}

/// Restricts an operator to the given dof simplex ids (typically the
/// interior simplices), deleting all other rows and columns.
pub fn eliminate_boundary(
    x: &AssembledOperator,
    interior: &[usize],
) -> Result<AssembledOperator, FemError> {
    let keep: Vec<usize> = x
        .dofs
        .iter()
        .enumerate()
        .filter(|(_, id)| interior.binary_search(id).is_ok())
        .map(|(pos, _)| pos)
        .collect();
    if keep.is_empty() {
        return Err(FemError::EmptyInterior);
    }
    let matrix = sparse::select(&x.matrix, &keep, &keep);
    Ok(AssembledOperator {
        kind: x.kind,
        space: x.space,
        zero_trace: true,
        matrix,
        dofs: keep.iter().map(|&pos| x.dofs[pos]).collect(),
    })
}

// ---------------------------------------------------------------------------
// Right-hand sides and L2 projection.
// ---------------------------------------------------------------------------

fn bary_to_xy(mesh: &TriMesh, f: usize, bary: [f64; 3]) -> (f64, f64) {
    let mut x = 0.0;
    let mut y = 0.0;
    for (a, &v) in mesh.faces[f].iter().enumerate() {
        x += bary[a] * mesh.positions[v][0];
        y += bary[a] * mesh.positions[v][1];
    }
    (x, y)
}

/// Load vector `b_j = ∫ f · ψ_j` over the degree-k basis of `mesh`.
pub fn assemble_rhs(
    mesh: &TriMesh,
    form: &AnalyticForm,
    quad: &TriQuadrature,
) -> Result<Vec<f64>, FemError> {
    let k = form.k();
    let n = match k {
        0 => mesh.n_vertices(),
        1 => mesh.n_edges(),
        2 => mesh.n_faces(),
        _ => return Err(FemError::UnsupportedDegree { k }),
    };
    let per_face = crate::par::map_range(mesh.n_faces(), |f| -> Result<Vec<(usize, f64)>, FemError> {
        let (area, grads) = face_gradients(mesh, f)?;
        let t = area.abs();
        let mut out = Vec::new();
        for &(bary, w) in &quad.points {
            let (x, y) = bary_to_xy(mesh, f, bary);
            match k {
                0 => {
                    let fv = form.eval_scalar(x, y);
                    for (a, &va) in mesh.faces[f].iter().enumerate() {
                        out.push((va, w * t * fv * bary[a]));
                    }
                }
                1 => {
                    let fv = form.eval_vector(x, y);
                    for &(e, _) in &mesh.face_edges[f] {
                        let [i, j] = mesh.edges[e].map(|v| local_index(mesh, f, v));
                        let we = [
                            bary[i] * grads[j][0] - bary[j] * grads[i][0],
                            bary[i] * grads[j][1] - bary[j] * grads[i][1],
                        ];
                        out.push((e, w * t * (fv[0] * we[0] + fv[1] * we[1])));
                    }
                }
                _ => {
                    // ∫ f · (χ_f / |f|) = (1/|f|) ∫_f f.
                    out.push((f, w * form.eval_scalar(x, y)));
                }
            }
        }
        Ok(out)
    });
    let mut b = vec![0.0f64; n];
    for face_entries in per_face {
        for (idx, val) in face_entries? {
            b[idx] += val;
        }
    }
    Ok(b)
}

/// `∫ |f|²` over the mesh, with the same quadrature as the load vector.
pub fn integrate_squared(
    mesh: &TriMesh,
    form: &AnalyticForm,
    quad: &TriQuadrature,
) -> Result<f64, FemError> {
    let per_face = crate::par::map_range(mesh.n_faces(), |f| -> Result<f64, FemError> {
        let (area, _) = face_gradients(mesh, f)?;
        let t = area.abs();
        let mut acc = 0.0;
        for &(bary, w) in &quad.points {
            let (x, y) = bary_to_xy(mesh, f, bary);
            let v2 = match form.k() {
                1 => {
                    let v = form.eval_vector(x, y);
                    v[0] * v[0] + v[1] * v[1]
                }
                _ => {
                    let v = form.eval_scalar(x, y);
                    v * v
                }
            };
            acc += w * t * v2;
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for v in per_face {
        total += v?;
    }
    Ok(total)
}

fn tr_matvec(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0f64; a.ncols()];
    for (i, row) in a.row_iter().enumerate() {
        let xi = x[i];
        if xi != 0.0 {
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                y[c] += v * xi;
            }
        }
    }
    y
}

/// `∫ |f − ω|²` where `ω` is the finite element field with fine-level
/// coefficients `y`. Sampling the residual pointwise avoids the
/// cancellation that limits the algebraic expansion of the same quantity to
/// square-root-of-epsilon accuracy.
fn sampled_error_squared(
    mesh: &TriMesh,
    k: usize,
    y: &[f64],
    form: &AnalyticForm,
    quad: &TriQuadrature,
) -> Result<f64, FemError> {
    let per_face = crate::par::map_range(mesh.n_faces(), |f| -> Result<f64, FemError> {
        let (area, grads) = face_gradients(mesh, f)?;
        let t = area.abs();
        let mut acc = 0.0;
        for &(bary, w) in &quad.points {
            let (x, yy) = bary_to_xy(mesh, f, bary);
            let r2 = match k {
                0 => {
                    let mut omega = 0.0;
                    for (a, &va) in mesh.faces[f].iter().enumerate() {
                        omega += y[va] * bary[a];
                    }
                    let r = form.eval_scalar(x, yy) - omega;
                    r * r
                }
                1 => {
                    let mut omega = [0.0f64; 2];
                    for &(e, _) in &mesh.face_edges[f] {
                        let [i, j] = mesh.edges[e].map(|v| local_index(mesh, f, v));
                        omega[0] += y[e] * (bary[i] * grads[j][0] - bary[j] * grads[i][0]);
                        omega[1] += y[e] * (bary[i] * grads[j][1] - bary[j] * grads[i][1]);
                    }
                    let fv = form.eval_vector(x, yy);
                    let (rx, ry) = (fv[0] - omega[0], fv[1] - omega[1]);
                    rx * rx + ry * ry
                }
                _ => {
                    let r = form.eval_scalar(x, yy) - y[f] / t;
                    r * r
                }
            };
            acc += w * t * r2;
        }
        Ok(acc)
    });
    let mut total = 0.0;
    for v in per_face {
        total += v?;
    }
    Ok(total)
}

/// L2 projection of an analytic form onto a (possibly coarse) subdivision
/// space, with its exact L2 error.
#[derive(Debug, Clone, Serialize)]
pub struct Projection {
    pub k: usize,
    /// Coefficient level.
    pub coarse_level: usize,
    /// Assembly level.
    pub fine_level: usize,
    pub n_dofs: usize,
    pub error: f64,
    #[serde(skip)]
    pub coefficients: Vec<f64>,
}

/// Projects `f` onto the degree-k subdivision space with coefficients at
/// level `l`, assembled at level `fine`. Solves `M̄ c = Aᵀ b`; the error
/// `‖f − ω̄‖ = sqrt(cᵀM̄c − 2cᵀAᵀb + ∫|f|²)` is evaluated by sampling the
/// residual with `ω̄` expanded in the fine-level basis, which computes the
/// same quantity without the cancellation floor of the raw expansion (the
/// expansion is cross-checked in debug builds at its conditioning limit).
pub fn project_l2(
    h: &Hierarchy,
    l: usize,
    fine: usize,
    form: &AnalyticForm,
) -> Result<Projection, FemError> {
    let k = form.k();
    let a = h.accumulate(k, l, fine)?;
    let mesh_fine = h.mesh(fine);
    let mass = assemble_mass(mesh_fine, k, fine)?;
    let m_bar = sparse::congruence(&a.f, &mass.matrix);
    let quad = TriQuadrature::for_degree(form.quadrature_degree);
    let b = assemble_rhs(mesh_fine, form, &quad)?;
    let atb = tr_matvec(&a.f, &b);
    let c = solvers::solve_spd(&m_bar, &atb)?;
    let mut y = vec![0.0f64; a.f.nrows()];
    sparse::matvec(&a.f, &c, &mut y);
    let mut err2 = sampled_error_squared(mesh_fine, k, &y, form, &quad)?;
    #[cfg(debug_assertions)]
    {
        let mut mc = vec![0.0f64; c.len()];
        sparse::matvec(&m_bar, &c, &mut mc);
        let ctm: f64 = c.iter().zip(&mc).map(|(a, b)| a * b).sum();
        let ctb: f64 = c.iter().zip(&atb).map(|(a, b)| a * b).sum();
        let f2 = integrate_squared(mesh_fine, form, &quad)?;
        let algebraic = ctm - 2.0 * ctb + f2;
        debug_assert!(
            (algebraic - err2).abs() <= 1e-10 * f2.abs().max(1.0),
            "algebraic error expansion {algebraic:.6e} vs sampled {err2:.6e}"
        );
    }
    if err2 < 0.0 {
        err2 = 0.0;
    }
    Ok(Projection {
        k,
        coarse_level: l,
        fine_level: fine,
        n_dofs: c.len(),
        error: err2.sqrt(),
        coefficients: c,
    })
}
