#![no_main]

use gic_core::lm::NgramModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(lm) = NgramModel::from_bytes(data) {
        let v = lm.vocab_size() as u32;
        let ctx: Vec<u32> = data.iter().take(4).map(|&b| u32::from(b) % v).collect();
        let p = lm.prob(1 % v, &ctx).unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }
});
