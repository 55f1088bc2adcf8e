#![no_main]

use libfuzzer_sys::fuzz_target;
use promptnav_core::sentiment::parse_remote_reply;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let families = ["Grinder".to_string(), "Wall".to_string()];
    if let Ok(out) = parse_remote_reply(&text, &families) {
        assert_eq!(out.likelihoods.len(), families.len());
        assert!(out.likelihoods.values().all(|&l| l > 0.0 && l < 1.0));
    }
});
