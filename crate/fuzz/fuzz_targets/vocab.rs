#![no_main]

use gic_core::data::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = Vocabulary::parse(text) {
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
        // encoding arbitrary text never panics
        let _ = v.encode(text);
    }
});
