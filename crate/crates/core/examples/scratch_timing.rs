//! Scratch timing probe for hierarchy construction at acceptance scale.

use std::time::Instant;

use subdforms::mesh::gen;
use subdforms::subdivision::{Hierarchy, Scheme};

fn main() {
    eprintln!("start");
    let base = gen::structured_square(8, [0.0, 1.0], [1.0, 1.0], false);
    eprintln!(
        "base: {} vertices {} edges {} faces",
        base.n_vertices(),
        base.n_edges(),
        base.n_faces()
    );
    for levels in 1..=5 {
        for scheme in [Scheme::Whitney, Scheme::LoopWang] {
            let t = Instant::now();
            let h = Hierarchy::build(base.clone(), levels, scheme).unwrap();
            let top = h.meshes.last().unwrap();
            eprintln!(
                "square8 {scheme:?}: {} levels, top {} faces, {:.2?}",
                levels,
                top.n_faces(),
                t.elapsed()
            );
        }
    }
}
