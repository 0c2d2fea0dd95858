#![no_main]

use libfuzzer_sys::fuzz_target;
use ppsi_harness::io::{breakpoints, parse_path_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_path_csv(data) {
        assert_eq!(breakpoints(&rows).len(), rows.len().saturating_sub(1));
    }
});
