#![no_main]

use gic_core::data::{format_hypotheses, parse_hypotheses};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_hypotheses(text) {
        let again = format_hypotheses(rows.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        assert_eq!(parse_hypotheses(&again).unwrap(), rows);
    }
});
