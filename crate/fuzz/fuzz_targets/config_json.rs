#![no_main]

use alloc_lab::config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(raw) = config::parse_json(text) {
        let _ = config::scenario_from_raw(&raw);
    }
});
