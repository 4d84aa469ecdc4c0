#![no_main]

use bcpo::experiment::parse_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = parse_spec(text) {
        let json = serde_json::to_string(&spec).expect("spec serializes");
        let again = parse_spec(&json).expect("round trip parses");
        assert_eq!(again, spec);
        assert_eq!(again.config_hash().ok(), spec.config_hash().ok());
    }
});
