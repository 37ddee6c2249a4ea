#![no_main]

use libfuzzer_sys::fuzz_target;
use polopt::config::{KeyValues, RunConfig};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(kv) = KeyValues::parse(text) {
            let _ = RunConfig::from_key_values(&kv);
        }
    }
});
