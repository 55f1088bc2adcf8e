#![no_main]

use libfuzzer_sys::fuzz_target;
use promptnav_core::scene::{parse_scene, rasterize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = parse_scene(text) else { return };
    // Accepted documents must survive a round trip and rasterize.
    let again = parse_scene(&spec.to_json().to_string()).expect("re-parse");
    assert_eq!(again, spec);
    if spec.cols() * spec.rows() <= 1 << 16 {
        let grid = rasterize(&spec);
        assert_eq!(grid.cols * grid.rows, spec.cols() * spec.rows());
    }
});
