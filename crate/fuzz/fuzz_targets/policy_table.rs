#![no_main]

use libfuzzer_sys::fuzz_target;
use ptr_rational::dp::PolicyTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = PolicyTable::from_text(text) {
            let again = PolicyTable::from_text(&table.to_text()).expect("round trip");
            assert_eq!(again.to_text(), table.to_text());
        }
    }
});
