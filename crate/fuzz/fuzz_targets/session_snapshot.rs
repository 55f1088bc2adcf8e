#![no_main]

use libfuzzer_sys::fuzz_target;
use promptnav_core::scene::parse_scene;
use promptnav_core::session::{Session, SessionSnapshot};

fuzz_target!(|data: &[u8]| {
    let Ok(snapshot) = serde_json::from_slice::<SessionSnapshot>(data) else { return };
    // Large but legal grids only cost time here.
    if parse_scene(&snapshot.scene.to_string()).is_ok_and(|s| s.cols() * s.rows() > 1 << 16) {
        return;
    }
    if let Ok(session) = Session::restore(&snapshot) {
        let again = Session::restore(&session.snapshot()).expect("restore own snapshot");
        assert_eq!(again.state_hash(), session.state_hash());
    }
});
