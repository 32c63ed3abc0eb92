#![no_main]

use gic_core::container::Container;
use gic_core::train::Trainer;
use libfuzzer_sys::fuzz_target;

/// Rebuilding the model costs time proportional to its size, so keep to
/// the small configurations the corpus seeds use.
fn small(c: &Container) -> bool {
    let m = &c.meta["config"]["model"];
    let at_most = |key: &str, limit: u64| m[key].as_u64().is_none_or(|v| v <= limit);
    at_most("layers", 8)
        && at_most("dim", 64)
        && at_most("ff_dim", 256)
        && at_most("vocab_size", 64)
        && at_most("feat_dim", 64)
        && at_most("conv_kernel", 31)
}

fuzz_target!(|data: &[u8]| {
    let Ok(c) = Container::from_bytes(data) else { return };
    if !small(&c) {
        return;
    }
    if let Ok(t) = Trainer::from_container(&c) {
        assert_eq!(t.to_container().unwrap().to_bytes().unwrap(), c.to_bytes().unwrap());
    }
});
