//! Mesh and matrix file formats: OFF and OBJ meshes, Matrix Market export.
