#![no_main]

use libfuzzer_sys::fuzz_target;
use navc_core::archive::read_archive;

fuzz_target!(|data: &[u8]| {
    let _ = read_archive(data);
});
