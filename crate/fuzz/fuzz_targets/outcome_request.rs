#![no_main]

use alloc_lab::session::parse_outcome_request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_outcome_request(data);
});
