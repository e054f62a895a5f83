#![no_main]

use libfuzzer_sys::fuzz_target;
use navc_core::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::from_bytes(data);
});
