#![no_main]

use libfuzzer_sys::fuzz_target;
use navc_core::entropy::bitstream::{read_stream, write_stream};

fuzz_target!(|data: &[u8]| {
    if let Ok((header, payload)) = read_stream(data) {
        let again = write_stream(&header, payload).expect("parsed header re-serializes");
        assert_eq!(again, data);
    }
});
