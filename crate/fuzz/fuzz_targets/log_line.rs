#![no_main]

use alloc_lab::session::parse_log_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ev) = parse_log_line(text, 1) {
        let line = ev.encode();
        assert_eq!(parse_log_line(&line, 1).expect("encoded line parses"), ev);
    }
});
