//! Subdivision-based spaces of discrete differential forms on triangle meshes.
//!
//! The crate builds Loop-style mesh hierarchies together with subdivision
//! matrices for 0-, 1-, and 2-form coefficients, verifies that the resulting
//! spaces form a discrete de Rham complex (the subdivision matrices commute
//! with the incidence matrices), and uses them for Galerkin computations:
//! mass/curl-curl assembly, unrefinement onto coarse levels, L2 projection,
//! and the Maxwell eigenvalue benchmark.
//!
//! Module map:
//! - [`mesh`]: immutable indexed triangle meshes, adjacency, boundary flags
//! - [`subdivision`]: quadrisection, Loop averaging, k-form subdivision matrices
//! - [`derham`]: incidence matrices, commutation checks, Betti numbers
//! - [`fem`]: lowest-order assembly, unrefinement, boundary elimination, L2 projection
//! - [`solvers`]: sparse LDL^T, CG, shift-invert block Lanczos, dense oracle
//! - [`geomfit`]: weighted least-squares fit of an initial mesh to a target domain
//! - [`sparse`]: CSR helpers shared by the modules above (float and exact rational)
//! - [`io`]: OFF/OBJ meshes and Matrix Market matrices

pub mod derham;
pub mod fem;
pub mod geomfit;
pub mod io;
pub mod mesh;
mod par;
pub mod solvers;
pub mod sparse;
pub mod subdivision;
