#![no_main]

use libfuzzer_sys::fuzz_target;
use promptnav_core::bayes::CoefficientStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = CoefficientStore::from_json(text) {
        let again = CoefficientStore::from_json(&store.to_json()).expect("re-parse");
        assert_eq!(again, store);
        assert!(store.posteriors().values().all(|&p| p > 0.0 && p < 1.0));
    }
});
