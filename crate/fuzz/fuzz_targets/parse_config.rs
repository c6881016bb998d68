#![no_main]

use libfuzzer_sys::fuzz_target;
use mfglab::cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            // An accepted config must survive its own canonical dump.
            let again = parse_config(&cfg.canonical()).expect("canonical config reparses");
            assert_eq!(again, cfg);
        }
    }
});
