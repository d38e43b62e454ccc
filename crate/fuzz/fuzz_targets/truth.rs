#![no_main]
use dpmood::synthgen::parse_truth;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_truth(data) {
        assert!(rows.iter().all(|r| !r.subject_id.is_empty()));
    }
});
