#![no_main]

use libfuzzer_sys::fuzz_target;
use navc_core::config::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = TrainConfig::from_json(text) {
            TrainConfig::from_json(&c.to_json()).expect("serialized config parses");
        }
    }
});
