#![no_main]

use libfuzzer_sys::fuzz_target;
use promptnav_core::field::PotentialGrid;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(field) = PotentialGrid::from_json(text) {
        assert_eq!(PotentialGrid::from_json(&field.to_json()).expect("re-parse"), field);
        let mut ppm = Vec::new();
        field.write_ppm(&mut ppm).expect("in-memory write");
    }
});
