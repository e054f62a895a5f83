#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use navc_core::data::{decode_raw, RawHeader};

// Input: u16 sidecar length, sidecar JSON, then the sample bytes.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = usize::from(u16::from_le_bytes([data[0], data[1]])).min(data.len() - 2);
    let (json, bytes) = data[2..].split_at(n);
    if let Ok(header) = RawHeader::parse(json) {
        let _ = decode_raw(&header, bytes, Path::new("fuzz.rawvid"));
    }
});
