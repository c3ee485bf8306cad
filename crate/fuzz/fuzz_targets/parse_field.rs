#![no_main]

use libfuzzer_sys::fuzz_target;
use qloc::io::{field_to_json, parse_field, Encoding};

fuzz_target!(|data: &str| {
    if let Ok(f) = parse_field(data) {
        let back = parse_field(&field_to_json(&f, Encoding::Hex)).expect("re-encoded field parses");
        assert_eq!(back.occupancy, f.occupancy);
    }
});
