#![no_main]
use dpmood::datamodel::parse_keypresses;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(parsed) = parse_keypresses(data) {
        for row in &parsed.rows {
            assert!(row.row.duration_ms.is_finite());
        }
    }
});
