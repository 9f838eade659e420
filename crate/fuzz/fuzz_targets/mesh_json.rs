#![no_main]

use libfuzzer_sys::fuzz_target;
use stochwave::Mesh;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mesh) = Mesh::from_json(text) {
            mesh.check().expect("decoded meshes pass the structural check");
            let back = Mesh::from_json(&mesh.to_json()).expect("dump round-trips");
            assert_eq!(back.n_cells(), mesh.n_cells());
        }
    }
});
