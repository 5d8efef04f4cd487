//! Local patch extraction and canonical labeling for stencil configuration
//! classes.
//!
//! A patch is the induced subcomplex on a face region around an anchor (a
//! directed coarse edge for half-edge stencils, an oriented coarse face for
//! face systems), together with the full-mesh flags the stencil constraints
//! depend on: vertex boundary status, full-mesh valence, and edge boundary
//! status. Patches are labeled by a breadth-first face exploration that is
//! fully determined by the starting face and its traversal order, so two
//! patches with equal encodings are isomorphic as flagged complexes via the
//! label correspondence. The canonical key is the lexicographically smallest
//! encoding over the admissible anchor-preserving starts; starts that tie
//! with the minimum yield the patch automorphisms used for equivariance
//! constraints.
//!
//! # Expected invariants
//! - The region is face-connected through shared edges and every region face
//!   is reachable from each candidate start face.
//! - Equal keys imply isomorphic flagged patches; the stored labelings make
//!   the isomorphism explicit.
//! - Automorphism maps fix the anchor (pointwise for directed edges, setwise
//!   for oriented faces).

use std::collections::{BTreeMap, BTreeSet};

use crate::mesh::TriMesh;

/// Flagged local complex with canonical labels.
#[derive(Debug, Clone)]
pub(crate) struct Patch {
    /// Faces in exploration order; entries are local vertex labels in the
    /// traversal order the exploration assigned (all faces consistently
    /// oriented within the patch, possibly mirrored w.r.t. the mesh).
    pub faces: Vec<[usize; 3]>,
    /// Global face id per local face.
    pub face_global: Vec<usize>,
    pub n_vertices: usize,
    /// Global vertex id per local label.
    pub vertex_global: Vec<usize>,
    pub vertex_boundary: Vec<bool>,
    pub vertex_valence: Vec<usize>,
    /// Local edges as sorted label pairs, lexicographically ordered.
    pub edges: Vec<[usize; 2]>,
    pub edge_boundary: Vec<bool>,
    /// Canonical configuration key (minimal encoding).
    pub key: String,
    /// Non-identity automorphisms as local vertex maps.
    pub automorphisms: Vec<Vec<usize>>,
    /// +1 when the chosen exploration traverses faces as the mesh orients
    /// them, -1 when the canonical labeling is the mirror image. Jobs of one
    /// class may have either chirality; orientation-sensitive per-job data
    /// flips with it.
    pub chirality: i8,
}

impl Patch {
    /// Local edge id of the sorted pair `{u, v}`.
    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        let pair = if u < v { [u, v] } else { [v, u] };
        self.edges.binary_search(&pair).ok()
    }

    /// +1 when the local pair `(u, v)` runs from the smaller label to the
    /// larger (the local canonical orientation), -1 otherwise.
    pub fn orient_sign(u: usize, v: usize) -> i64 {
        if u < v {
            1
        } else {
            -1
        }
    }

    /// Signed incidence of each local face on local edges: entries
    /// `(edge, sign)` with sign +1 when the traversal runs the edge in local
    /// canonical orientation.
    pub fn face_edge_signs(&self) -> Vec<[(usize, i64); 3]> {
        self.faces
            .iter()
            .map(|tri| {
                let mut out = [(0usize, 0i64); 3];
                for i in 0..3 {
                    let (u, v) = (tri[i], tri[(i + 1) % 3]);
                    let le = self.edge_id(u, v).expect("face edge in patch");
                    out[i] = (le, Self::orient_sign(u, v));
                }
                out
            })
            .collect()
    }
}

/// One deterministic exploration from a fixed start.
struct Exploration {
    encoding: String,
    /// Global vertex -> local label.
    vertex_label: BTreeMap<usize, usize>,
    /// Local label -> global vertex.
    vertex_global: Vec<usize>,
    /// Faces in exploration order with global ids and global-vertex traversal.
    face_list: Vec<(usize, [usize; 3])>,
}

fn explore(mesh: &TriMesh, region: &BTreeSet<usize>, start: (usize, [usize; 3])) -> Exploration {
    let (f0, tri0) = start;
    let mut vertex_label: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertex_global: Vec<usize> = Vec::new();
    for &g in &tri0 {
        vertex_label.insert(g, vertex_global.len());
        vertex_global.push(g);
    }
    let mut face_list: Vec<(usize, [usize; 3])> = vec![(f0, tri0)];
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    seen.insert(f0);
    let mut qi = 0;
    while qi < face_list.len() {
        let (fid, tri) = face_list[qi];
        qi += 1;
        for i in 0..3 {
            let (u, v) = (tri[i], tri[(i + 1) % 3]);
            let eid = mesh.edge_id(u, v).expect("face edge exists");
            for &nf in &mesh.edge_faces[eid] {
                if nf == usize::MAX || nf == fid || !region.contains(&nf) || seen.contains(&nf) {
                    continue;
                }
                let w = *mesh.faces[nf]
                    .iter()
                    .find(|&&x| x != u && x != v)
                    .expect("third vertex");
                if !vertex_label.contains_key(&w) {
                    vertex_label.insert(w, vertex_global.len());
                    vertex_global.push(w);
                }
                // The neighbor traverses the shared edge in the opposite
                // direction, keeping all patch faces consistently oriented.
                face_list.push((nf, [v, u, w]));
                seen.insert(nf);
            }
        }
    }
    debug_assert_eq!(seen.len(), region.len(), "region is face-connected");
    let mut enc = String::new();
    let mut flagged: Vec<bool> = vec![false; vertex_global.len()];
    for (_, tri) in &face_list {
        enc.push('|');
        for (i, &g) in tri.iter().enumerate() {
            if i > 0 {
                enc.push(',');
            }
            let l = vertex_label[&g];
            enc.push_str(&l.to_string());
            if !flagged[l] {
                flagged[l] = true;
                enc.push('=');
                enc.push(if mesh.boundary_vertex[g] { 'b' } else { 'i' });
                enc.push_str(&mesh.vertex_valence(g).to_string());
            }
        }
        enc.push(':');
        for i in 0..3 {
            let (u, v) = (tri[i], tri[(i + 1) % 3]);
            let eid = mesh.edge_id(u, v).expect("face edge exists");
            enc.push(if mesh.boundary_edge[eid] { 'B' } else { 'I' });
        }
    }
    Exploration {
        encoding: enc,
        vertex_label,
        vertex_global,
        face_list,
    }
}

/// Extracts the canonically labeled patch for a region and a set of
/// admissible anchor-preserving starts.
pub(crate) fn extract(
    mesh: &TriMesh,
    region: &BTreeSet<usize>,
    candidates: &[(usize, [usize; 3])],
) -> Patch {
    assert!(!candidates.is_empty(), "anchor has at least one start");
    let runs: Vec<Exploration> = candidates
        .iter()
        .map(|&c| explore(mesh, region, c))
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.encoding.cmp(&b.1.encoding).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("nonempty candidates");
    let min = &runs[best];
    let n = min.vertex_global.len();
    let chirality = {
        let (f0, tri0) = candidates[best];
        let mesh_tri = mesh.faces[f0];
        let rotated = (0..3).any(|r| (0..3).all(|i| tri0[i] == mesh_tri[(i + r) % 3]));
        if rotated {
            1
        } else {
            -1
        }
    };
    // Automorphisms: for every tying exploration, map each local label l to
    // the label the chosen exploration gives to the vertex that the tying
    // exploration labels l.
    let mut autos: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (i, run) in runs.iter().enumerate() {
        if i == best || run.encoding != min.encoding {
            continue;
        }
        let mut pi = vec![usize::MAX; n];
        for (g, &l_other) in &run.vertex_label {
            pi[l_other] = min.vertex_label[g];
        }
        if pi.iter().enumerate().any(|(l, &p)| p != l) {
            autos.insert(pi);
        }
    }
    let faces: Vec<[usize; 3]> = min
        .face_list
        .iter()
        .map(|(_, tri)| {
            let mut t = [0usize; 3];
            for (i, &g) in tri.iter().enumerate() {
                t[i] = min.vertex_label[&g];
            }
            t
        })
        .collect();
    let face_global: Vec<usize> = min.face_list.iter().map(|&(f, _)| f).collect();
    let mut edge_set: BTreeSet<[usize; 2]> = BTreeSet::new();
    for tri in &faces {
        for i in 0..3 {
            let (u, v) = (tri[i], tri[(i + 1) % 3]);
            edge_set.insert(if u < v { [u, v] } else { [v, u] });
        }
    }
    let edges: Vec<[usize; 2]> = edge_set.into_iter().collect();
    let edge_boundary: Vec<bool> = edges
        .iter()
        .map(|&[u, v]| {
            let eid = mesh
                .edge_id(min.vertex_global[u], min.vertex_global[v])
                .expect("patch edge exists in mesh");
            mesh.boundary_edge[eid]
        })
        .collect();
    let vertex_boundary: Vec<bool> = min
        .vertex_global
        .iter()
        .map(|&g| mesh.boundary_vertex[g])
        .collect();
    let vertex_valence: Vec<usize> = min
        .vertex_global
        .iter()
        .map(|&g| mesh.vertex_valence(g))
        .collect();
    Patch {
        faces,
        face_global,
        n_vertices: n,
        vertex_global: min.vertex_global.clone(),
        vertex_boundary,
        vertex_valence,
        edges,
        edge_boundary,
        key: min.encoding.clone(),
        automorphisms: autos.into_iter().collect(),
        chirality,
    }
}

/// Region of all faces sharing a vertex with any of the given faces.
pub(crate) fn vertex_ring_region(mesh: &TriMesh, seeds: &[usize]) -> BTreeSet<usize> {
    let mut region = BTreeSet::new();
    for &f in seeds {
        for &v in &mesh.faces[f] {
            for &g in mesh.faces_of_vertex(v) {
                region.insert(g);
            }
        }
    }
    region
}

/// Admissible starts for a directed edge anchor `(a, b)`: each incident face
/// begins its traversal `(a, b, w)`. The mirrored frame appears exactly when
/// the edge is interior (the second face), matching the geometric fact that a
/// boundary-edge patch has no reflection across the edge within the surface.
pub(crate) fn edge_anchor_candidates(mesh: &TriMesh, a: usize, b: usize) -> Vec<(usize, [usize; 3])> {
    let eid = mesh.edge_id(a, b).expect("anchor edge exists");
    let mut out = Vec::new();
    for &f in &mesh.edge_faces[eid] {
        if f == usize::MAX {
            continue;
        }
        let w = *mesh.faces[f]
            .iter()
            .find(|&&x| x != a && x != b)
            .expect("third vertex");
        out.push((f, [a, b, w]));
    }
    out
}

/// Admissible starts for an oriented face anchor: the three rotations of its
/// traversal and the three rotations of the reversed traversal.
pub(crate) fn face_anchor_candidates(mesh: &TriMesh, f: usize) -> Vec<(usize, [usize; 3])> {
    let [v0, v1, v2] = mesh.faces[f];
    vec![
        (f, [v0, v1, v2]),
        (f, [v1, v2, v0]),
        (f, [v2, v0, v1]),
        (f, [v0, v2, v1]),
        (f, [v2, v1, v0]),
        (f, [v1, v0, v2]),
    ]
}
