#![no_main]

use libfuzzer_sys::fuzz_target;
use qloc::io::{matrix_to_coordinate, parse_matrix_dump};

fuzz_target!(|data: &str| {
    if let Ok(a) = parse_matrix_dump(data) {
        let back = parse_matrix_dump(&matrix_to_coordinate(&a)).expect("re-encoded matrix parses");
        assert_eq!(back, a);
    }
});
