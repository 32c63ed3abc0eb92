#![no_main]

use gic_core::data::{decode_features, encode_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(x) = decode_features(data) {
        assert!(x.rows() > 0 && x.cols() > 0);
        assert!(x.data().iter().all(|v| v.is_finite()));
        assert_eq!(encode_features(&x).unwrap(), data);
    }
});
