#![no_main]

use bcpo::data::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = Dataset::from_jsonl_str(text) {
        // Anything accepted must survive a write and re-read unchanged.
        let again = ds.to_jsonl_string().expect("valid dataset serializes");
        assert_eq!(Dataset::from_jsonl_str(&again).expect("round trip parses"), ds);
    }
});
