//! Commutation-constrained subdivision stencils for 1-forms and 2-forms.
//!
//! The 0-form rows follow the Loop rules; this module derives the matching
//! 1-form rows (per fine edge) and 2-form rows (per fine face) so that both
//! commutation identities hold exactly:
//! `D0_f S0 = S1 D0_c` and `D1_f S1 = S2 D1_c`.
//!
//! Construction, per refinement step:
//! 1. Half-edge rows. For each half of a coarse edge, the gradient identity
//!    fixes the row's divergence pattern (the difference of the two Loop
//!    0-form rows at its endpoints). The row is solved on the edges of the
//!    faces around the parent edge's endpoints, with dihedral equivariance
//!    for every patch automorphism, support minimization by distance class,
//!    and the exact minimum-norm solution as the canonical representative.
//! 2. Face systems. Summing the four child curl identities of a coarse face
//!    telescopes the interior fine edges away and leaves
//!    `circ_f = (Σ_t w_t)·D1_c`, where `circ_f` is the signed sum of the six
//!    half rows around the face and `w_t` are the four 2-form rows. The
//!    combined row `W = Σ_t w_t` is therefore determined by the half rows
//!    (uniquely when the local curl rows are independent), and is split into
//!    the four children under the exact constraints `Σ_t w_t = W`, row sums
//!    1/4 each, and equivariance, again closed by support forcing and minimum
//!    norm. The interior fine-edge rows then follow from the corner-child
//!    curl identities, and the center identity holds by the telescoping.
//!
//! Row normalization: coefficients are face integrals, so one refinement
//! step carries the parent's unit mass to the four children together:
//! `sum(W) = 1`, each child row summing to 1/4 (the equal split is exact for
//! midpoint refinement and is the unique equivariant choice here). The
//! associated density-value scheme `4 S^2` then preserves constants. Forcing
//! `sum(W)` to anything else is inconsistent on bounded domains: boundary
//! half rows are determined by the one-dimensional boundary scheme, and
//! summing the face identities over all faces telescopes interior halves
//! away, forcing the total `Σ_f sum(W_f)` to the number of coarse faces.
//!
//! Mass allocation: `sum(W_f) = ⟨circ_f, ψ⟩` with `ψ` a local potential of
//! the unit density (`D1 ψ = 1` on the face's vertex ring region), so the
//! six half rows around each face must carry one combined unit of
//! circulation mass. The pairing difference of a half row against its two
//! adjacent faces' potentials is always forced by the gradient identity, and
//! for most configurations (boundary, mirror-symmetric, regular) the
//! pairings themselves are forced too; those rows are canonical per patch
//! class and cacheable. Midpoint (Whitney) halves contribute exactly unit
//! mass around every face, so only the symmetric deviation from the midpoint
//! pairing remains free on the other halves. One exact allocation system per
//! refinement step, with one equation per adjacent coarse face and the
//! minimum-norm solution, pins the free deviations so that every face
//! carries unit mass; faces whose halves are all forced are verified
//! against the same requirement when their systems are solved.
//!
//! # Expected invariants
//! - Every produced row references only coarse simplices within the vertex
//!   ring regions of the parent simplex's faces (supports stay inside the
//!   refined two-ring after accumulation).
//! - Boundary fine edges only reference boundary coarse edges.
//! - Determined rows are functions of the canonical patch key alone, so
//!   cached and freshly solved instances agree exactly; face records are
//!   keyed by the patch key together with the six localized half rows.

use std::collections::{BTreeMap, BTreeSet};

use num::{BigRational, One, Zero};

use crate::mesh::TriMesh;
use crate::sparse::Rat;

use super::patch::{self, Patch};
use super::symval::SymVal;
use super::system::{solve_spd, AddRow, Echelon};
use super::table::{StencilRecord, StencilTable};
use super::{EdgeParent, RefinementMap, SubdivisionError};

type Row = Vec<(usize, SymVal)>;

fn infeasible(context: &str) -> SubdivisionError {
    SubdivisionError::Infeasible {
        context: context.to_string(),
    }
}

fn rat_i(v: i64) -> Rat {
    BigRational::from_integer(v.into())
}

/// Builds the 1-form and 2-form subdivision rows for one refinement step.
pub(crate) fn build_s1_s2(
    coarse: &TriMesh,
    fine: &TriMesh,
    map: &RefinementMap,
    s0_rows: &[Row],
    table: &StencilTable,
) -> Result<(Vec<Row>, Vec<Row>), SubdivisionError> {
    let nv_c = coarse.n_vertices();
    let mut cache: BTreeMap<String, StencilRecord> = BTreeMap::new();
    let trace = std::env::var_os("SUBDFORMS_TRACE").is_some();
    let mut tick = std::time::Instant::now();
    let stage = |name: &str, tick: &mut std::time::Instant| {
        if trace {
            eprintln!("  [s1s2] {name}: {:.2?}", tick.elapsed());
        }
        *tick = std::time::Instant::now();
    };

    // Half-edge jobs: (fine edge id, even endpoint, coarse edge id).
    let mut half_jobs: Vec<(usize, usize, usize)> = Vec::new();
    for e in 0..coarse.n_edges() {
        let [a, b] = coarse.edges[e];
        for v in [a, b] {
            let fe = fine
                .edge_id(v, nv_c + e)
                .expect("half edge exists in the refined mesh");
            half_jobs.push((fe, v, e));
        }
    }
    let half_patches: Vec<Patch> =
        crate::par::map_slice(&half_jobs, |&(_, v, e)| half_patch(coarse, v, e));
    stage("half patches", &mut tick);

    // Presolve unique configurations in canonical key order. Classes whose
    // pairings are fully forced yield final rows; the rest keep their
    // echelon state for the mass allocation pass.
    let mut reps: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, p) in half_patches.iter().enumerate() {
        reps.entry(p.key.as_str()).or_insert(i);
    }
    let mut pending: BTreeMap<&str, (HalfPre, usize)> = BTreeMap::new();
    for (key, &i) in &reps {
        if table.get(key).is_some() || cache.contains_key(*key) {
            continue;
        }
        match half_presolve(&half_patches[i])? {
            HalfState::Determined(row) => {
                cache.insert(key.to_string(), StencilRecord::Half(row));
            }
            HalfState::Open(pre) => {
                pending.insert(key, (pre, i));
            }
        }
    }
    if trace {
        eprintln!(
            "  [s1s2] half classes: {} unique / {} jobs, {} open",
            reps.len(),
            half_jobs.len(),
            pending.len()
        );
    }
    stage("half presolve", &mut tick);
    // Stamp determined halves first; open classes get their rows from the
    // mass allocation pass, which reads the determined rows.
    let mut s1: Vec<Row> = vec![Vec::new(); fine.n_edges()];
    let mut open_jobs: Vec<usize> = Vec::new();
    let stamped = crate::par::map_range(half_jobs.len(), |ji| {
        let p = &half_patches[ji];
        match table.get(&p.key).or_else(|| cache.get(&p.key)) {
            Some(StencilRecord::Half(vals)) => Ok(Some(stamp_edge_row(coarse, p, vals))),
            Some(StencilRecord::Face(_)) => {
                Err(infeasible("half-edge row (table record has face kind)"))
            }
            None => Ok(None),
        }
    });
    for (ji, res) in stamped.into_iter().enumerate() {
        let (fe, _, _) = half_jobs[ji];
        match res? {
            Some(row) => s1[fe] = row,
            None => {
                let p = &half_patches[ji];
                debug_assert!(pending.contains_key(p.key.as_str()), "open class kept");
                open_jobs.push(ji);
            }
        }
    }
    stage("half stamping", &mut tick);
    if !pending.is_empty() {
        if trace {
            eprintln!("  [s1s2] open jobs: {}", open_jobs.len());
        }
        allocate_open_classes(coarse, fine, &half_jobs, &half_patches, &pending, &s1, &mut cache)?;
        let rows = crate::par::map_slice(&open_jobs, |&ji| {
            let p = &half_patches[ji];
            match cache.get(&p.key) {
                Some(StencilRecord::Half(vals)) => Ok(stamp_edge_row(coarse, p, vals)),
                _ => Err(infeasible("half-edge row (open class left unsolved)")),
            }
        });
        for (&ji, row) in open_jobs.iter().zip(rows) {
            let (fe, _, _) = half_jobs[ji];
            s1[fe] = row?;
        }
    }
    stage("mass allocation", &mut tick);

    // Face systems. The six localized half rows join the cache key because
    // allocated halves may differ between faces of the same patch class.
    let face_patches: Vec<Patch> =
        crate::par::map_range(coarse.n_faces(), |f| face_patch(coarse, f));
    stage("face patches", &mut tick);
    let face_halves: Vec<Vec<LocalHalf>> =
        crate::par::map_slice(&face_patches, |p| localize_halves(coarse, fine, p, &s1));
    let face_keys: Vec<String> = crate::par::map_range(coarse.n_faces(), |f| {
        let mut key = face_patches[f].key.clone();
        key.push_str(&halves_key(&face_halves[f]));
        key
    });
    let mut freps: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, key) in face_keys.iter().enumerate() {
        freps.entry(key.as_str()).or_insert(f);
    }
    stage("face keys", &mut tick);
    for (key, &f) in &freps {
        if table.get(key).is_some() || cache.contains_key(*key) {
            continue;
        }
        let sol = solve_face(&face_patches[f], &face_halves[f])?;
        cache.insert(key.to_string(), StencilRecord::Face(sol));
    }
    if trace {
        eprintln!(
            "  [s1s2] face classes: {} unique / {} faces",
            freps.len(),
            coarse.n_faces()
        );
    }
    stage("face solves", &mut tick);
    let stamped_faces = crate::par::map_range(coarse.n_faces(), |f| {
        let p = &face_patches[f];
        let rec = table
            .get(&face_keys[f])
            .or_else(|| cache.get(&face_keys[f]))
            .expect("every face key solved");
        let StencilRecord::Face(rows) = rec else {
            return Err(infeasible("face system (table record has half kind)"));
        };
        Ok(stamp_face_rows(coarse, map, f, p, rows))
    });
    let mut s2: Vec<Row> = vec![Vec::new(); fine.n_faces()];
    for res in stamped_faces {
        for (child, row) in res? {
            s2[child] = row;
        }
    }

    // Interior fine-edge rows from the corner-child curl identities. The
    // map reads only half rows of s1, never other interior rows.
    let interior_rows = crate::par::map_range(3 * coarse.n_faces(), |idx| {
        let (f, j) = (idx / 3, idx % 3);
        let cf = map.face_children[f][j];
        let mut acc = row_times_d1(coarse, &s2[cf]);
        let mut interior: Option<(usize, i8)> = None;
        for &(fe, sign) in &fine.face_edges[cf] {
            match map.edge_parentage[fe] {
                EdgeParent::HalfOf(_) => {
                    let term = scale_row(&s1[fe], sign);
                    acc = sub_rows(&acc, &term);
                }
                EdgeParent::Interior(_) => {
                    debug_assert!(interior.is_none(), "one interior edge per corner child");
                    interior = Some((fe, sign));
                }
            }
        }
        let (fe_y, s_y) = interior.expect("corner child has an interior edge");
        let row = if s_y > 0 {
            acc
        } else {
            acc.into_iter().map(|(c, v)| (c, v.neg())).collect()
        };
        (fe_y, row)
    });
    for (fe, row) in interior_rows {
        s1[fe] = row;
    }

    stage("face stamp + interior rows", &mut tick);

    #[cfg(debug_assertions)]
    verify_exact_commutation(coarse, fine, map, s0_rows, &s1, &s2);
    #[cfg(not(debug_assertions))]
    let _ = s0_rows;

    Ok((s1, s2))
}

/// Patch for a half-edge row: the vertex ring regions of the parent edge's
/// faces, anchored at the directed edge (even endpoint first).
fn half_patch(coarse: &TriMesh, even: usize, e: usize) -> Patch {
    let [a, b] = coarse.edges[e];
    let other = if even == a { b } else { a };
    let seeds: Vec<usize> = coarse.edge_faces[e]
        .iter()
        .copied()
        .filter(|&f| f != usize::MAX)
        .collect();
    let region = patch::vertex_ring_region(coarse, &seeds);
    let candidates = patch::edge_anchor_candidates(coarse, even, other);
    let mut p = patch::extract(coarse, &region, &candidates);
    p.key.insert_str(0, "h|");
    p
}

/// Patch for a face system: the vertex ring regions of the face and its edge
/// neighbors (so the patch covers the supports of all six half rows),
/// anchored at the oriented face.
fn face_patch(coarse: &TriMesh, f: usize) -> Patch {
    let mut seeds = vec![f];
    for &(eid, _) in &coarse.face_edges[f] {
        for &g in &coarse.edge_faces[eid] {
            if g != usize::MAX && g != f {
                seeds.push(g);
            }
        }
    }
    let region = patch::vertex_ring_region(coarse, &seeds);
    let candidates = patch::face_anchor_candidates(coarse, f);
    let mut p = patch::extract(coarse, &region, &candidates);
    p.key.insert_str(0, "f|");
    p
}

fn stamp_edge_row(coarse: &TriMesh, p: &Patch, vals: &[(usize, SymVal)]) -> Row {
    let mut out: BTreeMap<usize, SymVal> = BTreeMap::new();
    for (le, v) in vals {
        let [u, w] = p.edges[*le];
        let gu = p.vertex_global[u];
        let gw = p.vertex_global[w];
        let ge = coarse
            .edge_id(gu.min(gw), gu.max(gw))
            .expect("patch edge exists in mesh");
        let val = if gu < gw { v.clone() } else { v.neg() };
        out.insert(ge, val);
    }
    out.into_iter().filter(|(_, v)| !v.is_zero()).collect()
}

fn stamp_face_rows(
    coarse: &TriMesh,
    map: &RefinementMap,
    f: usize,
    p: &Patch,
    rows: &[Vec<(usize, SymVal)>; 4],
) -> [(usize, Row); 4] {
    std::array::from_fn(|t| {
        let child = if t == 3 {
            map.face_children[f][3]
        } else {
            // Local anchor label t sits at global vertex p.vertex_global[t];
            // the corner child index follows the coarse face's vertex order.
            let gv = p.vertex_global[t];
            let slot = coarse.faces[f]
                .iter()
                .position(|&x| x == gv)
                .expect("anchor vertex on the face");
            map.face_children[f][slot]
        };
        let mut row: Vec<(usize, SymVal)> = rows[t]
            .iter()
            .filter(|(_, v)| !v.is_zero())
            .map(|(lf, v)| (p.face_global[*lf], v.clone()))
            .collect();
        row.sort_by_key(|&(c, _)| c);
        (child, row)
    })
}

/// `row · D1_c`: expands a 2-form row into the signed sum of coarse curl rows.
fn row_times_d1(coarse: &TriMesh, row: &Row) -> Row {
    let mut acc: BTreeMap<usize, SymVal> = BTreeMap::new();
    for (gf, wv) in row {
        for &(eid, sign) in &coarse.face_edges[*gf] {
            let term = if sign > 0 { wv.clone() } else { wv.neg() };
            let slot = acc.entry(eid).or_insert_with(SymVal::zero);
            *slot = slot.add(&term);
        }
    }
    acc.into_iter().filter(|(_, v)| !v.is_zero()).collect()
}

fn scale_row(row: &Row, sign: i8) -> Row {
    if sign > 0 {
        row.clone()
    } else {
        row.iter().map(|(c, v)| (*c, v.neg())).collect()
    }
}

fn sub_rows(a: &Row, b: &Row) -> Row {
    let mut acc: BTreeMap<usize, SymVal> = a.iter().cloned().collect();
    for (c, v) in b {
        let slot = acc.entry(*c).or_insert_with(SymVal::zero);
        *slot = slot.sub(v);
    }
    acc.into_iter().filter(|(_, v)| !v.is_zero()).collect()
}

/// The gradient-identity system of one half row: divergence constraints on
/// the star mask, in canonical unknown order (parent-touching edges first).
struct HalfSystem {
    unknowns: Vec<usize>,
    index: BTreeMap<usize, usize>,
    ech: Echelon,
}

fn half_mask(p: &Patch, a: usize, b: usize) -> Vec<usize> {
    let pe = p.edge_id(a, b).expect("parent edge in patch");
    let mut mask: BTreeSet<usize> = BTreeSet::new();
    for tri in &p.faces {
        if tri.contains(&a) || tri.contains(&b) {
            for i in 0..3 {
                mask.insert(p.edge_id(tri[i], tri[(i + 1) % 3]).expect("face edge"));
            }
        }
    }
    if p.edge_boundary[pe] {
        // Boundary fine edges only reference boundary coarse edges.
        mask.retain(|&le| p.edge_boundary[le]);
    }
    let touches = |le: usize| {
        let [u, v] = p.edges[le];
        u == a || u == b || v == a || v == b
    };
    let mut order: Vec<usize> = mask.into_iter().collect();
    order.sort_by_key(|&le| (usize::from(!touches(le)), le));
    order
}

/// Loop 0-form row difference across the half (odd row of the parent edge
/// minus even row of the even endpoint), over local vertices.
fn half_g(p: &Patch, a: usize, b: usize) -> BTreeMap<usize, SymVal> {
    let pe = p.edge_id(a, b).expect("parent edge in patch");
    let mut g: BTreeMap<usize, SymVal> = BTreeMap::new();
    let add = |g: &mut BTreeMap<usize, SymVal>, v: usize, val: SymVal| {
        let slot = g.entry(v).or_insert_with(SymVal::zero);
        *slot = slot.add(&val);
    };
    if p.edge_boundary[pe] {
        add(&mut g, a, SymVal::from_ratio(1, 2));
        add(&mut g, b, SymVal::from_ratio(1, 2));
    } else {
        add(&mut g, a, SymVal::from_ratio(3, 8));
        add(&mut g, b, SymVal::from_ratio(3, 8));
        for tri in &p.faces {
            if tri.contains(&a) && tri.contains(&b) {
                let w = *tri.iter().find(|&&x| x != a && x != b).expect("third vertex");
                add(&mut g, w, SymVal::from_ratio(1, 8));
            }
        }
    }
    let neighbors: Vec<usize> = p
        .edges
        .iter()
        .enumerate()
        .filter_map(|(le, &[u, v])| {
            if u == a {
                Some((le, v))
            } else if v == a {
                Some((le, u))
            } else {
                None
            }
        })
        .filter_map(|(le, n)| {
            if p.vertex_boundary[a] {
                if p.edge_boundary[le] {
                    Some(n)
                } else {
                    None
                }
            } else {
                Some(n)
            }
        })
        .collect();
    if p.vertex_boundary[a] {
        add(&mut g, a, SymVal::from_ratio(-3, 4));
        debug_assert_eq!(neighbors.len(), 2, "boundary vertex has two boundary edges");
        for n in neighbors {
            add(&mut g, n, SymVal::from_ratio(-1, 8));
        }
    } else {
        let val = p.vertex_valence[a];
        let beta = SymVal::beta_term(val, Rat::one());
        add(
            &mut g,
            a,
            SymVal::from_ratio(-1, 1).add(&beta.scale(&rat_i(val as i64))),
        );
        for n in neighbors {
            add(&mut g, n, beta.neg());
        }
    }
    g.retain(|_, v| !v.is_zero());
    g
}

fn half_a_system(p: &Patch, a: usize, b: usize) -> Result<HalfSystem, SubdivisionError> {
    let unknowns = half_mask(p, a, b);
    let index: BTreeMap<usize, usize> = unknowns.iter().enumerate().map(|(i, &le)| (le, i)).collect();
    let mut ech = Echelon::new(unknowns.len());
    let g = half_g(p, a, b);
    for v in 0..p.n_vertices {
        let mut coeffs = vec![Rat::zero(); unknowns.len()];
        let mut any = false;
        for (slot, &le) in unknowns.iter().enumerate() {
            let [x, y] = p.edges[le];
            if y == v {
                coeffs[slot] = Rat::one();
                any = true;
            } else if x == v {
                coeffs[slot] = -Rat::one();
                any = true;
            }
        }
        let rhs = g.get(&v).cloned().unwrap_or_else(SymVal::zero);
        if !any && rhs.is_zero() {
            continue;
        }
        if ech.add_row(coeffs, rhs) == AddRow::Infeasible {
            return Err(infeasible(
                "half-edge row (gradient constraints inconsistent)",
            ));
        }
    }
    Ok(HalfSystem {
        unknowns,
        index,
        ech,
    })
}

/// Minimum-norm local potential ψ of the unit density on the vertex ring
/// region of a local face: `D1 ψ = 1` there, ψ over all patch edges.
fn face_region_potential(p: &Patch, lf: usize) -> Result<Vec<Rat>, SubdivisionError> {
    let tri = p.faces[lf];
    let fes = p.face_edge_signs();
    let region: Vec<usize> = (0..p.faces.len())
        .filter(|&g| p.faces[g].iter().any(|v| tri.contains(v)))
        .collect();
    let ne = p.edges.len();
    let k = region.len();
    let mut gram = vec![vec![Rat::zero(); k]; k];
    for i in 0..k {
        for j in i..k {
            let mut s = 0i64;
            for &(le1, s1) in &fes[region[i]] {
                for &(le2, s2) in &fes[region[j]] {
                    if le1 == le2 {
                        s += s1 * s2;
                    }
                }
            }
            gram[i][j] = rat_i(s);
            gram[j][i] = rat_i(s);
        }
    }
    let ones = vec![Rat::one(); k];
    let mu = solve_spd(&gram, &ones).ok_or_else(|| {
        infeasible("unit-density potential (dependent local curl rows)")
    })?;
    let mut psi = vec![Rat::zero(); ne];
    for (idx, &g) in region.iter().enumerate() {
        for &(le, s) in &fes[g] {
            psi[le] += mu[idx].clone() * rat_i(s);
        }
    }
    Ok(psi)
}

fn add_edge_symmetry_rows(sys: &mut HalfSystem, p: &Patch) -> Result<(), SubdivisionError> {
    for pi in &p.automorphisms {
        debug_assert!(pi[0] == 0 && pi[1] == 1, "half automorphisms fix the anchor");
        for (slot, &le) in sys.unknowns.iter().enumerate() {
            let [u, v] = p.edges[le];
            let (iu, iv) = (pi[u], pi[v]);
            let ile = p
                .edge_id(iu, iv)
                .expect("automorphism maps patch edges to patch edges");
            let Some(&islot) = sys.index.get(&ile) else {
                continue;
            };
            let sign: i64 = if iu < iv { 1 } else { -1 };
            if islot == slot && sign == 1 {
                continue;
            }
            let mut coeffs = vec![Rat::zero(); sys.unknowns.len()];
            coeffs[islot] += Rat::one();
            coeffs[slot] -= rat_i(sign);
            if coeffs.iter().all(|c| c.is_zero()) {
                continue;
            }
            if sys.ech.add_row(coeffs, SymVal::zero()) == AddRow::Infeasible {
                return Err(infeasible(
                    "half-edge row (equivariance conflicts with constraints)",
                ));
            }
        }
    }
    Ok(())
}

/// Presolve state of a half class whose pairings stay free: the echelon
/// after the gradient, equivariance, and support constraints. Pairing data
/// for the mass allocation pass is recomputed per job in global terms (a
/// class may cover both mirror images of a neighborhood, which flips local
/// orientations).
struct HalfPre {
    unknowns: Vec<usize>,
    ech: Echelon,
}

enum HalfState {
    Determined(Vec<(usize, SymVal)>),
    Open(HalfPre),
}

/// Solves one half-edge row on its canonical patch as far as the local
/// constraints go. Local labels 0 and 1 are the even endpoint and the far
/// endpoint of the parent edge.
fn half_presolve(p: &Patch) -> Result<HalfState, SubdivisionError> {
    let (a, b) = (0usize, 1usize);
    let mut sys = half_a_system(p, a, b)?;
    add_edge_symmetry_rows(&mut sys, p)?;
    // Support minimization: zero the ring edges (not touching the parent
    // edge's endpoints) as a block, else one at a time.
    let class1: Vec<usize> = sys
        .unknowns
        .iter()
        .enumerate()
        .filter(|&(_, &le)| {
            let [u, v] = p.edges[le];
            !(u == a || u == b || v == a || v == b)
        })
        .map(|(slot, _)| slot)
        .collect();
    if !sys.ech.try_force_zero(&class1) {
        for &s in &class1 {
            let _ = sys.ech.try_force_zero(&[s]);
        }
    }
    // Pairing functionals of the adjacent faces. When all are forced, the
    // minimum-norm solution is final; otherwise the echelon goes to the
    // allocation pass. The pairing difference across an interior parent edge
    // must always be forced (the free directions of the gradient system are
    // cycles around faces inside both ring regions).
    let mut entries: Vec<Vec<Rat>> = Vec::new();
    for lf in 0..p.faces.len() {
        if !(p.faces[lf].contains(&a) && p.faces[lf].contains(&b)) {
            continue;
        }
        let psi = face_region_potential(p, lf)?;
        entries.push(sys.unknowns.iter().map(|&le| psi[le].clone()).collect());
    }
    if entries.len() == 2 {
        let diff: Vec<Rat> = entries[0]
            .iter()
            .zip(&entries[1])
            .map(|(x, y)| x.clone() - y.clone())
            .collect();
        if sys.ech.functional_value(&diff).is_none() {
            return Err(infeasible(
                "half-edge row (pairing asymmetry undetermined)",
            ));
        }
    }
    let forced = entries
        .iter()
        .all(|en| sys.ech.functional_value(en).is_some());
    if forced {
        let x = sys.ech.solve_min_norm();
        let row: Vec<(usize, SymVal)> = sys
            .unknowns
            .iter()
            .zip(x)
            .filter(|(_, v)| !v.is_zero())
            .map(|(&le, v)| (le, v))
            .collect();
        return Ok(HalfState::Determined(row));
    }
    Ok(HalfState::Open(HalfPre {
        unknowns: sys.unknowns,
        ech: sys.ech,
    }))
}

/// Minimum-norm potential of the unit density on the vertex ring region of a
/// coarse face, sparse over global edge ids.
fn region_potential(mesh: &TriMesh, f: usize) -> Result<BTreeMap<usize, Rat>, SubdivisionError> {
    let mut region: BTreeSet<usize> = BTreeSet::new();
    for &v in &mesh.faces[f] {
        for &g in mesh.faces_of_vertex(v) {
            region.insert(g);
        }
    }
    let region: Vec<usize> = region.into_iter().collect();
    let k = region.len();
    let mut gram = vec![vec![Rat::zero(); k]; k];
    for i in 0..k {
        for j in i..k {
            let mut s = 0i64;
            for &(e1, s1) in &mesh.face_edges[region[i]] {
                for &(e2, s2) in &mesh.face_edges[region[j]] {
                    if e1 == e2 {
                        s += i64::from(s1) * i64::from(s2);
                    }
                }
            }
            gram[i][j] = rat_i(s);
            gram[j][i] = rat_i(s);
        }
    }
    let ones = vec![Rat::one(); k];
    let mu = solve_spd(&gram, &ones)
        .ok_or_else(|| infeasible("unit-density potential (dependent curl rows)"))?;
    let mut psi: BTreeMap<usize, Rat> = BTreeMap::new();
    for (idx, &g) in region.iter().enumerate() {
        for &(eid, s) in &mesh.face_edges[g] {
            let slot = psi.entry(eid).or_insert_with(Rat::zero);
            *slot += mu[idx].clone() * rat_i(i64::from(s));
        }
    }
    Ok(psi)
}

/// One adjacent coarse face of a half job, in global terms: the traversal
/// sign (+1 when the face goes from the even endpoint to the far endpoint),
/// the face's ψ localized to the class unknowns, and the midpoint (Whitney)
/// pairing against ψ.
struct JobFace {
    sign: i64,
    coeffs: Vec<Rat>,
    pw: SymVal,
}

/// Global pairing data of one half job against its adjacent faces.
/// Localizing the global ψ uses the same canonical-pair sign convention as
/// stamping, so a local functional value equals the stamped row's global
/// pairing; signs are global traversal signs.
fn job_face_data(
    coarse: &TriMesh,
    job: (usize, usize, usize),
    p: &Patch,
    unknowns: &[usize],
    psis: &BTreeMap<usize, BTreeMap<usize, Rat>>,
) -> Vec<JobFace> {
    let (_, even, e) = job;
    let half_rat = BigRational::new(1.into(), 2.into());
    let [ea, eb] = coarse.edges[e];
    let other = ea + eb - even;
    // Midpoint pairing sign: the flow from the even endpoint matches the
    // canonical low-to-high orientation iff even < other.
    let sigma = if even < other { 1i64 } else { -1 };
    let mut entries: Vec<JobFace> = Vec::new();
    for &f in &coarse.edge_faces[e] {
        if f == usize::MAX {
            continue;
        }
        let psi = &psis[&f];
        let tri = coarse.faces[f];
        let sign = (0..3)
            .find_map(|i| {
                if tri[i] == even && tri[(i + 1) % 3] == other {
                    Some(1i64)
                } else if tri[i] == other && tri[(i + 1) % 3] == even {
                    Some(-1)
                } else {
                    None
                }
            })
            .expect("face contains the parent edge");
        let coeffs: Vec<Rat> = unknowns
            .iter()
            .map(|&le| {
                let [u, w] = p.edges[le];
                let gu = p.vertex_global[u];
                let gw = p.vertex_global[w];
                let ge = coarse
                    .edge_id(gu.min(gw), gu.max(gw))
                    .expect("patch edge exists in mesh");
                let v = psi.get(&ge).cloned().unwrap_or_else(Rat::zero);
                if gu < gw {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let pw = psi.get(&e).cloned().unwrap_or_else(Rat::zero)
            * half_rat.clone()
            * rat_i(sigma);
        entries.push(JobFace {
            sign,
            coeffs,
            pw: SymVal::from_rat(pw),
        });
    }
    entries.sort_by_key(|en| -en.sign);
    entries
}

/// Pins the free pairing parameter of every open half class so that each
/// coarse face carries unit circulation mass, then solves the classes.
///
/// Each open class has one free parameter: the symmetric deviation `w` of
/// its pairings from the midpoint baseline `pw ± δ'/2`. A job of chirality
/// `π` realizes the deviation `π w` (the canonical labeling of a class
/// covers both mirror images and pairings flip under mirroring), so the two
/// halves of an edge cancel in a face equation whenever both carry the same
/// class and chirality. Faces where every contribution cancels are skipped:
/// their unit-mass requirement carries no information about the parameters
/// and is verified when their face systems are solved. The remaining system
/// is small (boundary neighborhoods and irregular vertices), exact, and
/// closed by minimum norm; completed classes are cached like determined
/// ones, but never exported to the stencil table because the allocation is a
/// per-step global solve.
fn allocate_open_classes(
    coarse: &TriMesh,
    fine: &TriMesh,
    half_jobs: &[(usize, usize, usize)],
    half_patches: &[Patch],
    pending: &BTreeMap<&str, (HalfPre, usize)>,
    s1: &[Row],
    cache: &mut BTreeMap<String, StencilRecord>,
) -> Result<(), SubdivisionError> {
    let nv_c = coarse.n_vertices();
    let half_rat = BigRational::new(1.into(), 2.into());
    let class_slot: BTreeMap<&str, usize> = pending
        .keys()
        .enumerate()
        .map(|(slot, &key)| (key, slot))
        .collect();
    let n_classes = pending.len();
    // Jobs were listed per coarse edge: tail endpoint first, head second.
    let job_id = |e: usize, tail: usize| -> usize {
        let [a, _] = coarse.edges[e];
        2 * e + usize::from(tail != a)
    };
    let open_slot = |ji: usize| -> Option<usize> {
        class_slot.get(half_patches[ji].key.as_str()).copied()
    };

    // Candidate faces, screened combinatorially: keep only faces where the
    // class parameters do not cancel.
    let mut candidates: BTreeSet<usize> = BTreeSet::new();
    for (ji, &(_, _, e)) in half_jobs.iter().enumerate() {
        if open_slot(ji).is_some() {
            for &f in &coarse.edge_faces[e] {
                if f != usize::MAX {
                    candidates.insert(f);
                }
            }
        }
    }
    let mut kept: Vec<(usize, Vec<Rat>)> = Vec::new();
    for &f in &candidates {
        let tri = coarse.faces[f];
        let mut coeffs = vec![Rat::zero(); n_classes];
        for i in 0..3 {
            let (u, v) = (tri[i], tri[(i + 1) % 3]);
            let e = coarse
                .edge_id(u.min(v), u.max(v))
                .expect("face edge exists");
            for (tail, s) in [(u, 1i64), (v, -1i64)] {
                let ji = job_id(e, tail);
                if let Some(slot) = open_slot(ji) {
                    let pi = i64::from(half_patches[ji].chirality);
                    coeffs[slot] += rat_i(s * pi);
                }
            }
        }
        if coeffs.iter().any(|c| !c.is_zero()) {
            kept.push((f, coeffs));
        }
    }

    // Potentials for the kept faces and for each representative's faces.
    let mut psis: BTreeMap<usize, BTreeMap<usize, Rat>> = BTreeMap::new();
    let mut want: BTreeSet<usize> = kept.iter().map(|&(f, _)| f).collect();
    for (_, &(_, rep)) in pending.iter() {
        let (_, _, e) = half_jobs[rep];
        for &f in &coarse.edge_faces[e] {
            if f != usize::MAX {
                want.insert(f);
            }
        }
    }
    for f in want {
        psis.insert(f, region_potential(coarse, f)?);
    }

    // Per class: the representative's face data and the forced half
    // asymmetry δ'/2 (zero for boundary parent edges).
    let mut rep_faces: Vec<Vec<JobFace>> = Vec::with_capacity(n_classes);
    let mut dhalves: Vec<SymVal> = Vec::with_capacity(n_classes);
    let mut rep_chirality: Vec<i64> = Vec::with_capacity(n_classes);
    for (_, (pre, rep)) in pending.iter() {
        let p = &half_patches[*rep];
        let entries = job_face_data(coarse, half_jobs[*rep], p, &pre.unknowns, &psis);
        let dhalf = if entries.len() == 2 {
            let diff: Vec<Rat> = entries[0]
                .coeffs
                .iter()
                .zip(&entries[1].coeffs)
                .map(|(x, y)| x.clone() - y.clone())
                .collect();
            // The pairing difference is forced: the free directions of the
            // gradient system are cycles inside both ring regions.
            let delta = pre.ech.functional_value(&diff).ok_or_else(|| {
                infeasible("half-edge row (pairing asymmetry undetermined)")
            })?;
            delta
                .sub(&entries[0].pw.sub(&entries[1].pw))
                .scale(&half_rat)
        } else {
            SymVal::zero()
        };
        rep_chirality.push(i64::from(p.chirality));
        rep_faces.push(entries);
        dhalves.push(dhalf);
    }

    // Allocation system: for each kept face, the six signed pairings sum
    // to 1. Open pairings contribute pw + s δ'/2 + π w; determined pairings
    // come from the stamped rows.
    let mut ech = Echelon::new(n_classes);
    for (f, coeffs) in kept {
        let psi = &psis[&f];
        let mut rhs = SymVal::from_ratio(1, 1);
        let tri = coarse.faces[f];
        for i in 0..3 {
            let (u, v) = (tri[i], tri[(i + 1) % 3]);
            let e = coarse
                .edge_id(u.min(v), u.max(v))
                .expect("face edge exists");
            for (tail, s) in [(u, 1i64), (v, -1i64)] {
                let ji = job_id(e, tail);
                let fixed = if let Some(slot) = open_slot(ji) {
                    let even = tail;
                    let [ea, eb] = coarse.edges[e];
                    let other = ea + eb - even;
                    let sigma = if even < other { 1i64 } else { -1 };
                    let pw = psi.get(&e).cloned().unwrap_or_else(Rat::zero)
                        * half_rat.clone()
                        * rat_i(sigma);
                    SymVal::from_rat(pw).add(&dhalves[slot].scale(&rat_i(s)))
                } else {
                    let fe = fine
                        .edge_id(tail, nv_c + e)
                        .expect("half edge exists in the refined mesh");
                    let mut val = SymVal::zero();
                    for (ge, coeff) in &s1[fe] {
                        if let Some(pv) = psi.get(ge) {
                            val = val.add(&coeff.scale(pv));
                        }
                    }
                    val
                };
                let signed = if s > 0 { fixed } else { fixed.neg() };
                rhs = rhs.sub(&signed);
            }
        }
        if ech.add_row(coeffs, rhs) == AddRow::Infeasible {
            return Err(infeasible(
                "mass allocation (face requirements inconsistent)",
            ));
        }
    }
    let w = ech.solve_min_norm();

    // Complete each class through its representative and cache the row.
    for (slot, (key, (pre, _))) in pending.iter().enumerate() {
        let mut sys = pre.ech.clone();
        let dev = w[slot].scale(&rat_i(rep_chirality[slot]));
        for jf in &rep_faces[slot] {
            let target = jf
                .pw
                .add(&dhalves[slot].scale(&rat_i(jf.sign)))
                .add(&dev);
            if sys.add_row(jf.coeffs.clone(), target) == AddRow::Infeasible {
                return Err(infeasible("half-edge row (mass rows inconsistent)"));
            }
        }
        let x = sys.solve_min_norm();
        let vals: Vec<(usize, SymVal)> = pre
            .unknowns
            .iter()
            .zip(x)
            .filter(|(_, v)| !v.is_zero())
            .map(|(&le, v)| (le, v))
            .collect();
        cache.insert(key.to_string(), StencilRecord::Half(vals));
    }
    Ok(())
}

/// One localized half row of the anchor face: dense over local edges.
struct LocalHalf {
    tail: usize,
    parent: usize,
    row: Vec<SymVal>,
}

fn localize_halves(
    coarse: &TriMesh,
    fine: &TriMesh,
    p: &Patch,
    s1: &[Row],
) -> Vec<LocalHalf> {
    let nv_c = coarse.n_vertices();
    let g2l: BTreeMap<usize, usize> = p
        .vertex_global
        .iter()
        .enumerate()
        .map(|(l, &g)| (g, l))
        .collect();
    let anchor = p.faces[0];
    let mut out = Vec::with_capacity(6);
    for i in 0..3 {
        let (u, v) = (anchor[i], anchor[(i + 1) % 3]);
        let le = p.edge_id(u, v).expect("anchor edge");
        for tail in [u, v] {
            let other = if tail == u { v } else { u };
            let gt = p.vertex_global[tail];
            let go = p.vertex_global[other];
            let ge = coarse
                .edge_id(gt.min(go), gt.max(go))
                .expect("anchor edge in mesh");
            let fe = fine.edge_id(gt, nv_c + ge).expect("half edge");
            let mut dense = vec![SymVal::zero(); p.edges.len()];
            for (gce, val) in &s1[fe] {
                let [ga, gb] = coarse.edges[*gce];
                let la = *g2l.get(&ga).expect("half support inside the face patch");
                let lb = *g2l.get(&gb).expect("half support inside the face patch");
                let le2 = p.edge_id(la, lb).expect("support edge in patch");
                dense[le2] = if la < lb { val.clone() } else { val.neg() };
            }
            out.push(LocalHalf {
                tail,
                parent: le,
                row: dense,
            });
        }
    }
    out
}

/// Canonical serialization of the six localized half rows, appended to the
/// face cache key.
fn halves_key(halves: &[LocalHalf]) -> String {
    let mut out = String::new();
    for h in halves {
        out.push('#');
        out.push_str(&format!("{}>{}", h.tail, h.parent));
        for (le, v) in h.row.iter().enumerate() {
            if !v.is_zero() {
                out.push_str(&format!(",{}:{}", le, v.to_table_string()));
            }
        }
    }
    out
}

/// Solves the four 2-form rows of one face system on its canonical patch.
fn solve_face(
    p: &Patch,
    halves: &[LocalHalf],
) -> Result<[Vec<(usize, SymVal)>; 4], SubdivisionError> {
    let anchor = p.faces[0];
    debug_assert_eq!(anchor, [0, 1, 2], "anchor face carries the first labels");
    let nf = p.faces.len();
    let ne = p.edges.len();
    let fes = p.face_edge_signs();
    let region0: Vec<usize> = (0..nf)
        .filter(|&g| p.faces[g].iter().any(|v| anchor.contains(v)))
        .collect();
    let slot_of: BTreeMap<usize, usize> = region0.iter().enumerate().map(|(s, &g)| (g, s)).collect();

    // Signed circulation of the six half rows around the anchor traversal.
    let mut circ = vec![SymVal::zero(); ne];
    for i in 0..3 {
        let (u, v) = (anchor[i], anchor[(i + 1) % 3]);
        let le = p.edge_id(u, v).expect("anchor edge");
        let tail_half = halves
            .iter()
            .find(|h| h.tail == u && h.parent == le)
            .expect("tail half present");
        let head_half = halves
            .iter()
            .find(|h| h.tail == v && h.parent == le)
            .expect("head half present");
        for le2 in 0..ne {
            circ[le2] = circ[le2]
                .add(&tail_half.row[le2])
                .sub(&head_half.row[le2]);
        }
    }

    // Combined row W: W · D1 = circ on the vertex ring region of the anchor.
    let nr = region0.len();
    let mut ech = Echelon::new(nr);
    for le in 0..ne {
        let mut coeffs = vec![Rat::zero(); nr];
        let mut any = false;
        for (slot, &g) in region0.iter().enumerate() {
            for &(e2, s) in &fes[g] {
                if e2 == le {
                    coeffs[slot] += rat_i(s);
                    any = true;
                }
            }
        }
        if !any && circ[le].is_zero() {
            continue;
        }
        if ech.add_row(coeffs, circ[le].clone()) == AddRow::Infeasible {
            return Err(infeasible(
                "face system (circulation outside the local curl span)",
            ));
        }
    }
    let ones = vec![Rat::one(); nr];
    match ech.functional_value(&ones) {
        Some(total) => {
            if total != SymVal::from_ratio(1, 1) {
                return Err(infeasible(
                    "face system (half-row circulation does not carry unit mass)",
                ));
            }
        }
        None => {
            if ech.add_row(ones, SymVal::from_ratio(1, 1)) == AddRow::Infeasible {
                return Err(infeasible("face system (cannot normalize the density)"));
            }
        }
    }
    let w_total = ech.solve_min_norm();

    // Split W into the four children.
    let nvars = 4 * nr;
    let var = |t: usize, slot: usize| t * nr + slot;
    let mut ech2 = Echelon::new(nvars);
    for slot in 0..nr {
        let mut coeffs = vec![Rat::zero(); nvars];
        for t in 0..4 {
            coeffs[var(t, slot)] = Rat::one();
        }
        if ech2.add_row(coeffs, w_total[slot].clone()) == AddRow::Infeasible {
            return Err(infeasible("face system (child split inconsistent)"));
        }
    }
    for t in 0..4 {
        let mut coeffs = vec![Rat::zero(); nvars];
        for slot in 0..nr {
            coeffs[var(t, slot)] = Rat::one();
        }
        if ech2.add_row(coeffs, SymVal::from_ratio(1, 4)) == AddRow::Infeasible {
            return Err(infeasible("face system (row sums conflict with the split)"));
        }
    }
    // Equivariance under the patch automorphisms (they permute the anchor
    // labels and the region faces; the center child is fixed).
    let face_lookup: BTreeMap<Vec<usize>, usize> = (0..nf)
        .map(|g| {
            let mut key = p.faces[g].to_vec();
            key.sort_unstable();
            (key, g)
        })
        .collect();
    for pi in &p.automorphisms {
        debug_assert!(pi[..3].iter().all(|&x| x < 3), "autos permute the anchor");
        for (slot, &g) in region0.iter().enumerate() {
            let mut key: Vec<usize> = p.faces[g].iter().map(|&v| pi[v]).collect();
            key.sort_unstable();
            let ig = *face_lookup.get(&key).expect("automorphism maps faces");
            let islot = *slot_of.get(&ig).expect("image stays in the region");
            for t in 0..4 {
                let it = if t == 3 { 3 } else { pi[t] };
                if it == t && islot == slot {
                    continue;
                }
                let mut coeffs = vec![Rat::zero(); nvars];
                coeffs[var(it, islot)] += Rat::one();
                coeffs[var(t, slot)] -= Rat::one();
                if coeffs.iter().all(|c| c.is_zero()) {
                    continue;
                }
                if ech2.add_row(coeffs, SymVal::zero()) == AddRow::Infeasible {
                    return Err(infeasible(
                        "face system (equivariance conflicts with the split)",
                    ));
                }
            }
        }
    }
    // Support forcing, farthest class first: faces sharing only a vertex with
    // the anchor, then the center child off the anchor face, then each corner
    // child off the faces missing its vertex.
    let face_class = |g: usize| -> usize {
        if g == 0 {
            return 0;
        }
        let shared = p.faces[g]
            .iter()
            .filter(|v| anchor.contains(v))
            .count();
        if shared >= 2 {
            1
        } else {
            2
        }
    };
    let class2: Vec<usize> = region0
        .iter()
        .enumerate()
        .filter(|&(_, &g)| face_class(g) == 2)
        .flat_map(|(slot, _)| (0..4).map(move |t| var(t, slot)))
        .collect();
    if !ech2.try_force_zero(&class2) {
        let mut slots: Vec<usize> = region0
            .iter()
            .enumerate()
            .filter(|&(_, &g)| face_class(g) == 2)
            .map(|(slot, _)| slot)
            .collect();
        slots.reverse();
        for slot in slots {
            let vars: Vec<usize> = (0..4).map(|t| var(t, slot)).collect();
            if !ech2.try_force_zero(&vars) {
                for v in vars {
                    let _ = ech2.try_force_zero(&[v]);
                }
            }
        }
    }
    let center_off: Vec<usize> = region0
        .iter()
        .enumerate()
        .filter(|&(_, &g)| g != 0)
        .map(|(slot, _)| var(3, slot))
        .collect();
    if !ech2.try_force_zero(&center_off) {
        for v in center_off {
            let _ = ech2.try_force_zero(&[v]);
        }
    }
    for t in 0..3 {
        let foreign: Vec<usize> = region0
            .iter()
            .enumerate()
            .filter(|&(_, &g)| !p.faces[g].contains(&t))
            .map(|(slot, _)| var(t, slot))
            .collect();
        if !ech2.try_force_zero(&foreign) {
            for v in foreign {
                let _ = ech2.try_force_zero(&[v]);
            }
        }
    }
    let x = ech2.solve_min_norm();
    let mut out: [Vec<(usize, SymVal)>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for t in 0..4 {
        for (slot, &g) in region0.iter().enumerate() {
            let v = x[var(t, slot)].clone();
            if !v.is_zero() {
                out[t].push((g, v));
            }
        }
    }
    Ok(out)
}

/// Exact re-check of both commutation identities (debug builds only).
#[cfg(debug_assertions)]
fn verify_exact_commutation(
    coarse: &TriMesh,
    fine: &TriMesh,
    map: &RefinementMap,
    s0_rows: &[Row],
    s1: &[Row],
    s2: &[Row],
) {
    // Gradient identity per fine edge.
    for fe in 0..fine.n_edges() {
        let [pf, qf] = fine.edges[fe];
        let g = sub_rows(&s0_rows[qf], &s0_rows[pf]);
        // s1[fe] · D0_c: entry at coarse vertex v.
        let mut lhs: BTreeMap<usize, SymVal> = BTreeMap::new();
        for (ce, val) in &s1[fe] {
            let [a, b] = coarse.edges[*ce];
            let slot = lhs.entry(b).or_insert_with(SymVal::zero);
            *slot = slot.add(val);
            let slot = lhs.entry(a).or_insert_with(SymVal::zero);
            *slot = slot.sub(val);
        }
        let lhs: Row = lhs.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        assert_eq!(lhs, g, "gradient identity fails at fine edge {fe}");
    }
    // Curl identity per fine face.
    for ff in 0..fine.n_faces() {
        let mut lhs: Row = Vec::new();
        for &(fe, sign) in &fine.face_edges[ff] {
            lhs = sub_rows(&lhs, &scale_row(&s1[fe], -sign));
        }
        let rhs = row_times_d1(coarse, &s2[ff]);
        assert_eq!(lhs, rhs, "curl identity fails at fine face {ff}");
    }
    let _ = map;
}
