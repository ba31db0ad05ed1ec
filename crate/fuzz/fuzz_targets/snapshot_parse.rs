#![no_main]
use bitnet_mf::experiment::parse_snapshot;
use bitnet_mf::experiment::snapshot::snapshot_to_string;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(w) = parse_snapshot(text) {
            let again = parse_snapshot(&snapshot_to_string(&w)).expect("written snapshot parses");
            assert_eq!(again, w);
        }
    }
});
