#![no_main]

use alloc_lab::session::Session;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Session::replay_log(text) {
        let _ = s.view();
    }
});
