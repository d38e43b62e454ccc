#![no_main]
use dpmood::config::Config;
use libfuzzer_sys::fuzz_target;

// anything that parses survives a render and re-parse unchanged
fuzz_target!(|text: &str| {
    if let Ok(cfg) = Config::parse(text) {
        let again = Config::parse(&cfg.to_string()).expect("rendered config parses");
        assert_eq!(again, cfg);
    }
});
