#![no_main]
use bitnet_mf::experiment::parse_config;
use libfuzzer_sys::fuzz_target;

// Accepted configs must survive a trip through their canonical text.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            let again = parse_config(&cfg.canonical_text()).expect("canonical text parses");
            assert_eq!(again, cfg);
            assert_eq!(again.hash(), cfg.hash());
        }
    }
});
