#![no_main]

use alloc_lab::config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(raw) = config::parse_key_values(text) else { return };
    if let Ok(sc) = config::scenario_from_raw(&raw) {
        // printing and reparsing a valid scenario is lossless
        let again = config::parse(&sc.to_config_string()).expect("printed scenario parses");
        assert_eq!(again, sc);
    }
});
