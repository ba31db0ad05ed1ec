#![no_main]
use bitnet_mf::experiment::parse_results;
use bitnet_mf::experiment::records::results_to_string;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = parse_results(text) {
            let written = results_to_string(&records).expect("parsed records are finite");
            assert_eq!(parse_results(&written).expect("written results parse"), records);
        }
    }
});
