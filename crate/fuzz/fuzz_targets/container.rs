#![no_main]

use gic_core::container::Container;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::from_bytes(data) {
        // anything accepted must survive a round trip
        let bytes = c.to_bytes().expect("accepted container re-encodes");
        assert_eq!(Container::from_bytes(&bytes).expect("re-encoded container parses"), c);
    }
});
