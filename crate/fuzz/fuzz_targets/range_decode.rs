#![no_main]

use libfuzzer_sys::fuzz_target;
use navc_core::entropy::{EntropyConfig, EntropyModel};

// First byte picks a small grid; the rest is the payload.
fuzz_target!(|data: &[u8]| {
    let Some((&shape, payload)) = data.split_first() else {
        return;
    };
    let t = 1 + usize::from(shape & 1);
    let h = 1 + usize::from((shape >> 1) & 3);
    let w = 1 + usize::from((shape >> 3) & 3);
    let model = EntropyModel::new(&EntropyConfig::default(), 2, 8).expect("model");
    let params = model.init_params(u64::from(shape));
    if let Ok(grid) = model.range_decode(&params, payload, [t, h, w, 2]) {
        assert!(grid.values().iter().all(|&s| (0.0..8.0).contains(&s)));
    }
});
