#![no_main]
use dpmood::datamodel::parse_accel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_accel(data);
});
