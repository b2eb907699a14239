#![no_main]

use libfuzzer_sys::fuzz_target;
use ptr_rational::experiments::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(text) {
            // Accepted configs must survive their own serialisation.
            let again = RunConfig::from_json(&cfg.to_json()).expect("round trip");
            assert_eq!(again.to_json(), cfg.to_json());
        }
    }
});
