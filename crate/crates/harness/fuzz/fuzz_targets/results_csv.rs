#![no_main]

use libfuzzer_sys::fuzz_target;
use ppsi_harness::io::{parse_results_csv, write_results_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = parse_results_csv(data) else {
        return;
    };
    let mut buf = Vec::new();
    write_results_csv(&rows, &mut buf).unwrap();
    let again = parse_results_csv(buf.as_slice()).unwrap();
    assert_eq!(again.len(), rows.len());
});
