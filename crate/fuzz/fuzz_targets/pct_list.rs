#![no_main]

use libfuzzer_sys::fuzz_target;
use ptr_rational::experiments::parse_pct_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(values) = parse_pct_list(text) {
            assert!(values.iter().all(|v| *v > 0.0 && *v <= 100.0));
        }
    }
});
