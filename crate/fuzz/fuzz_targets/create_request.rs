#![no_main]

use alloc_lab::session::{parse_create_request, Session};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(req) = parse_create_request(data) else { return };
    let (mut s, _) = Session::create("f", req, 0).expect("validated request creates");
    for m in 0..8 {
        s.enroll(0).expect("enroll");
        s.record_outcome(m, m % 3 == 0, 0).expect("outcome");
    }
    let _ = s.view();
});
