//! Immutable indexed triangle meshes with canonical simplex orderings.
//!
//! A [`TriMesh`] stores vertices, faces, and a derived canonical edge list, and
//! answers adjacency and boundary queries. All derived tables are computed
//! eagerly in [`TriMesh::build`]; afterwards the mesh is value-immutable and
//! safe to share across threads.
//!
//! # Expected invariants
//! - Every edge lies in exactly one or two faces; one-face edges and their
//!   endpoints are flagged as boundary.
//! - The canonical edge list is lexicographically sorted and duplicate-free;
//!   edge endpoints are stored low id first, which fixes the canonical edge
//!   orientation used for incidence signs.
//! - In the plane (`dim == 2`), every face has strictly positive signed area,
//!   i.e. faces are counterclockwise.
//! - Interior edges are traversed in opposite directions by their two faces,
//!   so the mesh is consistently oriented.

use std::collections::HashMap;

use thiserror::Error;

/// Simplex degree: 0 for vertices, 1 for edges, 2 for faces.
pub type Degree = usize;

/// Errors raised while validating a candidate triangle mesh.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("face {face} references vertex {vertex} but only {n_vertices} vertices exist")]
    InvalidVertexId {
        face: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("face {face} repeats a vertex id")]
    DegenerateFace { face: usize },
    #[error("face {face} has non-positive signed area {area} (faces must be counterclockwise)")]
    NegativeArea { face: usize, area: f64 },
    #[error("faces {faces:?} are duplicates of the same vertex set")]
    DuplicateFace { faces: [usize; 2] },
    #[error("edge ({a},{b}) belongs to more than two faces")]
    NonManifold { a: usize, b: usize },
    #[error("interior edge ({a},{b}) is traversed twice in the same direction; orientation is inconsistent")]
    NonOrientable { a: usize, b: usize },
    #[error("vertex {vertex} has a disconnected or non-disc link")]
    NonManifoldVertex { vertex: usize },
    #[error("vertex {vertex} belongs to no face")]
    IsolatedVertex { vertex: usize },
}

/// A set of simplex ids of one degree at one mesh level.
///
/// Ids are kept sorted and duplicate-free, so set equality is `Vec` equality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexSet {
    /// Form degree of the member simplices.
    pub degree: Degree,
    /// Sorted, duplicate-free member ids.
    pub ids: Vec<usize>,
}

impl SimplexSet {
    /// Builds a set from arbitrary ids, sorting and deduplicating.
    pub fn new(degree: Degree, mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SimplexSet { degree, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// Flat CSR-style adjacency table: `items[offsets[i]..offsets[i+1]]` lists the
/// neighbors of entity `i`.
#[derive(Debug, Clone)]
struct AdjacencyTable {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl AdjacencyTable {
    /// Builds the table from (entity, neighbor) pairs; neighbors of each entity
    /// are sorted for deterministic iteration.
    fn from_pairs(n_entities: usize, pairs: &mut Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n_entities + 1];
        for &(e, _) in pairs.iter() {
            offsets[e + 1] += 1;
        }
        for i in 0..n_entities {
            offsets[i + 1] += offsets[i];
        }
        let items = pairs.iter().map(|&(_, n)| n).collect();
        AdjacencyTable { offsets, items }
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Immutable triangle mesh with canonical orientations and eager adjacency.
#[derive(Debug, Clone)]
pub struct TriMesh {
    /// Coordinate dimension, 2 or 3. With `dim == 2` the third coordinate is 0.
    pub dim: usize,
    /// Vertex positions; the third component is unused padding for `dim == 2`.
    pub positions: Vec<[f64; 3]>,
    /// Faces as counterclockwise vertex triples.
    pub faces: Vec<[usize; 3]>,
    /// Canonical edges `(a, b)` with `a < b`, lexicographically sorted.
    pub edges: Vec<[usize; 2]>,
    /// Per face, per local edge `(v_i, v_{i+1})`: canonical edge id and the
    /// sign (+1 when the face traverses the edge from low to high vertex id).
    pub face_edges: Vec<[(usize, i8); 3]>,
    /// Face ids incident to each edge; `usize::MAX` marks the absent second face.
    pub edge_faces: Vec<[usize; 2]>,
    /// True for vertices on the boundary.
    pub boundary_vertex: Vec<bool>,
    /// True for edges with exactly one incident face.
    pub boundary_edge: Vec<bool>,
    vertex_edges: AdjacencyTable,
    vertex_faces: AdjacencyTable,
}

impl TriMesh {
    /// Builds a mesh from planar vertex positions; faces must be counterclockwise.
    pub fn build_2d(positions: Vec<[f64; 2]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let padded = positions.iter().map(|&[x, y]| [x, y, 0.0]).collect();
        Self::build(2, padded, faces)
    }

    /// Builds a mesh from 3D vertex positions; faces must be consistently oriented.
    pub fn build_3d(positions: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::build(3, positions, faces)
    }

    /// Validates the face list, derives canonical edges, orientation signs,
    /// adjacency tables, and boundary flags.
    pub fn build(
        dim: usize,
        positions: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
        if faces.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let n_vertices = positions.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n_vertices {
                    return Err(MeshError::InvalidVertexId {
                        face: fi,
                        vertex: v,
                        n_vertices,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
            if dim == 2 {
                let area = signed_area_2d(&positions, *f);
                if area <= 0.0 {
                    return Err(MeshError::NegativeArea { face: fi, area });
                }
            }
        }

        // Duplicate faces (same vertex set) would silently break manifold and
        // refinement bookkeeping, so they are rejected outright.
        let mut face_keys: HashMap<[usize; 3], usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            let mut key = *f;
            key.sort_unstable();
            if let Some(&prev) = face_keys.get(&key) {
                return Err(MeshError::DuplicateFace { faces: [prev, fi] });
            }
            face_keys.insert(key, fi);
        }

        // Canonical edge list: sorted unique (low, high) pairs.
        let mut edges: Vec<[usize; 2]> = Vec::with_capacity(faces.len() * 3);
        for f in &faces {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                edges.push([a.min(b), a.max(b)]);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let edge_index: HashMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();

        let mut face_edges = vec![[(0usize, 0i8); 3]; faces.len()];
        let mut edge_faces = vec![[usize::MAX; 2]; edges.len()];
        // Net traversal direction per edge; an interior edge of an oriented
        // mesh is traversed once forwards and once backwards.
        let mut edge_dir_sum = vec![0i32; edges.len()];
        for (fi, f) in faces.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                let e = edge_index[&[a.min(b), a.max(b)]];
                let sign: i8 = if a < b { 1 } else { -1 };
                face_edges[fi][i] = (e, sign);
                edge_dir_sum[e] += sign as i32;
                if edge_faces[e][0] == usize::MAX {
                    edge_faces[e][0] = fi;
                } else if edge_faces[e][1] == usize::MAX {
                    edge_faces[e][1] = fi;
                } else {
                    return Err(MeshError::NonManifold {
                        a: edges[e][0],
                        b: edges[e][1],
                    });
                }
            }
        }
        for (e, &[a, b]) in edges.iter().enumerate() {
            if edge_faces[e][1] != usize::MAX && edge_dir_sum[e] != 0 {
                return Err(MeshError::NonOrientable { a, b });
            }
        }

        let mut boundary_edge = vec![false; edges.len()];
        let mut boundary_vertex = vec![false; n_vertices];
        for (e, ef) in edge_faces.iter().enumerate() {
            if ef[1] == usize::MAX {
                boundary_edge[e] = true;
                boundary_vertex[edges[e][0]] = true;
                boundary_vertex[edges[e][1]] = true;
            }
        }

        let mut ve_pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for (e, &[a, b]) in edges.iter().enumerate() {
            ve_pairs.push((a, e));
            ve_pairs.push((b, e));
        }
        let vertex_edges = AdjacencyTable::from_pairs(n_vertices, &mut ve_pairs);

        let mut vf_pairs: Vec<(usize, usize)> = Vec::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vf_pairs.push((v, fi));
            }
        }
        let vertex_faces = AdjacencyTable::from_pairs(n_vertices, &mut vf_pairs);

        for v in 0..n_vertices {
            if vertex_faces.neighbors(v).is_empty() {
                return Err(MeshError::IsolatedVertex { vertex: v });
            }
        }

        let mesh = TriMesh {
            dim,
            positions,
            faces,
            edges,
            face_edges,
            edge_faces,
            boundary_vertex,
            boundary_edge,
            vertex_edges,
            vertex_faces,
        };
        mesh.check_vertex_links()?;
        Ok(mesh)
    }

    /// Verifies that every vertex link is a single fan (boundary vertex) or a
    /// single cycle (interior vertex).
    fn check_vertex_links(&self) -> Result<(), MeshError> {
        for v in 0..self.n_vertices() {
            let faces = self.vertex_faces.neighbors(v);
            let n_faces = faces.len();
            // Walk the fan from an arbitrary start face in both directions.
            let start = faces[0];
            let mut visited = 1usize;
            for first_dir in [0, 1] {
                let mut prev = start;
                let mut cur = self.fan_neighbor(v, start, first_dir);
                while let Some(c) = cur {
                    if c == start {
                        break;
                    }
                    visited += 1;
                    let next = [0, 1]
                        .into_iter()
                        .filter_map(|d| self.fan_neighbor(v, c, d))
                        .find(|&n| n != prev);
                    prev = c;
                    cur = next;
                }
                if cur == Some(start) {
                    // Closed fan; one direction suffices.
                    break;
                }
            }
            if visited < n_faces {
                return Err(MeshError::NonManifoldVertex { vertex: v });
            }
            // An interior vertex (no boundary edge at v) must have a closed fan
            // with as many faces as edges; a boundary vertex one fewer.
            let n_edges = self.vertex_edges.neighbors(v).len();
            let expected = if self.boundary_vertex[v] {
                n_edges - 1
            } else {
                n_edges
            };
            if n_faces != expected {
                return Err(MeshError::NonManifoldVertex { vertex: v });
            }
        }
        Ok(())
    }

    /// The face across the `side`-th edge of `face` that is incident to `v`,
    /// if any. Helper for walking the fan of faces around `v`.
    fn fan_neighbor(&self, v: usize, face: usize, side: usize) -> Option<usize> {
        let mut candidates = self.face_edges[face]
            .iter()
            .filter(|&&(e, _)| self.edges[e][0] == v || self.edges[e][1] == v)
            .map(|&(e, _)| e);
        let e = match side {
            0 => candidates.next()?,
            _ => candidates.nth(1)?,
        };
        let [f0, f1] = self.edge_faces[e];
        let other = if f0 == face { f1 } else { f0 };
        (other != usize::MAX).then_some(other)
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Simplex count by degree.
    pub fn n_simplices(&self, k: Degree) -> usize {
        match k {
            0 => self.n_vertices(),
            1 => self.n_edges(),
            2 => self.n_faces(),
            _ => panic!("degree {k} out of range"),
        }
    }

    /// Number of edges incident to `v`.
    pub fn vertex_valence(&self, v: usize) -> usize {
        self.vertex_edges.neighbors(v).len()
    }

    /// Edges incident to `v`, sorted by id.
    pub fn edges_of_vertex(&self, v: usize) -> &[usize] {
        self.vertex_edges.neighbors(v)
    }

    /// Faces incident to `v`, sorted by id.
    pub fn faces_of_vertex(&self, v: usize) -> &[usize] {
        self.vertex_faces.neighbors(v)
    }

    /// Canonical edge id of the pair `{a, b}`, if the edge exists.
    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    /// True if the simplex `(k, id)` lies on the boundary. Faces never do.
    pub fn is_boundary(&self, k: Degree, id: usize) -> bool {
        match k {
            0 => self.boundary_vertex[id],
            1 => self.boundary_edge[id],
            2 => false,
            _ => panic!("degree {k} out of range"),
        }
    }

    /// Set-valued adjacency: all `p`-simplices incident to the given
    /// `q`-simplices (the union of the individual contributions). For `p == q`
    /// the input set is returned unchanged.
    pub fn adjacency(&self, p: Degree, q: Degree, input: &SimplexSet) -> SimplexSet {
        assert_eq!(input.degree, q, "input degree must match q");
        assert!(p <= 2 && q <= 2, "degrees must be in 0..=2");
        let mut out: Vec<usize> = Vec::new();
        for &id in &input.ids {
            match (p, q) {
                (0, 1) => out.extend(self.edges[id]),
                (0, 2) => out.extend(self.faces[id]),
                (1, 0) => out.extend(self.vertex_edges.neighbors(id)),
                (2, 0) => out.extend(self.vertex_faces.neighbors(id)),
                (1, 2) => out.extend(self.face_edges[id].iter().map(|&(e, _)| e)),
                (2, 1) => out.extend(self.edge_faces[id].iter().filter(|&&f| f != usize::MAX)),
                _ => out.push(id),
            }
        }
        SimplexSet::new(p, out)
    }

    /// Face two-ring of the simplex `(k, id)`: all faces sharing a vertex with
    /// any face incident to the simplex (FV ∘ VF ∘ FK composition).
    pub fn face_two_ring(&self, k: Degree, id: usize) -> SimplexSet {
        let seed = SimplexSet::new(k, vec![id]);
        let faces = self.adjacency(2, k, &seed);
        let vertices = self.adjacency(0, 2, &faces);
        self.adjacency(2, 0, &vertices)
    }

    /// Interior (non-boundary) simplices of degree `k`. All faces are interior.
    pub fn interior_simplices(&self, k: Degree) -> SimplexSet {
        let n = self.n_simplices(k);
        let ids = (0..n).filter(|&i| !self.is_boundary(k, i)).collect();
        SimplexSet::new(k, ids)
    }

    /// Unsigned area of face `f` (one half cross-product norm; valid in 2D and 3D).
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let p = self.positions[a];
        let q = self.positions[b];
        let r = self.positions[c];
        let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    /// Euclidean length of edge `e`.
    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        let p = self.positions[a];
        let q = self.positions[b];
        let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Boundary loops as cyclic vertex sequences, each traversed so that the
    /// surface lies to the left (counterclockwise outer boundary in the plane).
    /// Loops are reported in order of their smallest vertex id, starting there.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        // Directed boundary steps: a boundary edge is traversed by exactly one
        // face; the face's traversal direction orients the loop.
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (fi, fe) in self.face_edges.iter().enumerate() {
            for (i, &(e, _)) in fe.iter().enumerate() {
                if self.boundary_edge[e] {
                    let a = self.faces[fi][i];
                    let b = self.faces[fi][(i + 1) % 3];
                    next.insert(a, b);
                }
            }
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = vec![false; self.n_vertices()];
        let mut loops = Vec::new();
        for s in starts {
            if seen[s] {
                continue;
            }
            let mut cycle = vec![s];
            seen[s] = true;
            let mut cur = next[&s];
            while cur != s {
                seen[cur] = true;
                cycle.push(cur);
                cur = next[&cur];
            }
            loops.push(cycle);
        }
        loops
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    }

    /// Euler characteristic |V| - |E| + |F|.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64
    }
}

/// Twice-signed area helper; positive for counterclockwise triangles.
fn signed_area_2d(positions: &[[f64; 3]], [a, b, c]: [usize; 3]) -> f64 {
    let p = positions[a];
    let q = positions[b];
    let r = positions[c];
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
}

pub mod gen {
    //! Deterministic generators for benchmark and test meshes.

    use super::TriMesh;

    /// Structured `n x n` square grid on `[x0, x0+w] x [y0, y0+h]`, each cell
    /// split into two triangles. With `alternating` the split diagonal flips in
    /// a checkerboard pattern; otherwise all diagonals are parallel.
    pub fn structured_square(
        n: usize,
        origin: [f64; 2],
        size: [f64; 2],
        alternating: bool,
    ) -> TriMesh {
        assert!(n >= 1);
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut positions = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                positions.push([
                    origin[0] + size[0] * i as f64 / n as f64,
                    origin[1] + size[1] * j as f64 / n as f64,
                ]);
            }
        }
        let mut faces = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                let flip = alternating && (i + j) % 2 == 1;
                if flip {
                    // Diagonal b-d.
                    faces.push([a, b, d]);
                    faces.push([b, c, d]);
                } else {
                    // Diagonal a-c.
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
        }
        TriMesh::build_2d(positions, faces).expect("structured square is a valid mesh")
    }

    /// Triangulated disk whose interior valences cover 4 through 8: the center
    /// has valence 8 and the eight inner-ring vertices have valences
    /// 4,5,6,7,4,5,6,7 by giving inner vertex `i` exactly `t_i` outer
    /// neighbors, consecutive inner vertices sharing one outer vertex.
    pub fn disk_mixed_valence() -> TriMesh {
        use std::f64::consts::PI;
        let inner = 8usize;
        let t = [1usize, 2, 3, 4, 1, 2, 3, 4];
        let outer: usize = t.iter().map(|&ti| ti - 1).sum::<usize>() + inner - 8;
        debug_assert_eq!(outer, 12);
        let mut positions = vec![[0.0, 0.0]];
        for i in 0..inner {
            let a = 2.0 * PI * i as f64 / inner as f64;
            positions.push([0.5 * a.cos(), 0.5 * a.sin()]);
        }
        for j in 0..outer {
            let a = 2.0 * PI * j as f64 / outer as f64 + PI / outer as f64;
            positions.push([a.cos(), a.sin()]);
        }
        let iv = |i: usize| 1 + i % inner;
        let wv = |j: usize| 1 + inner + j % outer;
        let mut faces = Vec::new();
        for i in 0..inner {
            faces.push([0, iv(i), iv(i + 1)]);
        }
        let mut s = 0usize;
        for i in 0..inner {
            // Fan triangles between vi and its outer neighbors w_s .. w_{s+t-1},
            // then one stitch triangle to the next inner vertex.
            for j in s..s + t[i] - 1 {
                faces.push([iv(i), wv(j), wv(j + 1)]);
            }
            faces.push([iv(i), wv(s + t[i] - 1), iv(i + 1)]);
            s += t[i] - 1;
        }
        TriMesh::build_2d(positions, faces).expect("disk generator is a valid mesh")
    }

    /// Triangulated annulus: two concentric `n`-gon rings, 2n triangles.
    pub fn annulus(n: usize, r_inner: f64, r_outer: f64) -> TriMesh {
        use std::f64::consts::PI;
        assert!(n >= 3 && r_inner > 0.0 && r_outer > r_inner);
        let mut positions = Vec::with_capacity(2 * n);
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            positions.push([r_inner * t.cos(), r_inner * t.sin()]);
        }
        for i in 0..n {
            let t = 2.0 * PI * (i as f64 + 0.5) / n as f64;
            positions.push([r_outer * t.cos(), r_outer * t.sin()]);
        }
        let iv = |i: usize| i % n;
        let ov = |i: usize| n + i % n;
        let mut faces = Vec::with_capacity(2 * n);
        for i in 0..n {
            faces.push([iv(i), ov(i), iv(i + 1)]);
            faces.push([iv(i + 1), ov(i), ov(i + 1)]);
        }
        TriMesh::build_2d(positions, faces).expect("annulus generator is a valid mesh")
    }

    /// Regular polygon fan around its centroid (used for corner-detection tests).
    pub fn polygon_fan(n: usize, radius: f64) -> TriMesh {
        use std::f64::consts::PI;
        assert!(n >= 3);
        let mut positions = vec![[0.0, 0.0]];
        for i in 0..n {
            let t = 2.0 * PI * i as f64 / n as f64;
            positions.push([radius * t.cos(), radius * t.sin()]);
        }
        let faces = (0..n).map(|i| [0, 1 + i, 1 + (i + 1) % n]).collect();
        TriMesh::build_2d(positions, faces).expect("polygon fan is a valid mesh")
    }
}
