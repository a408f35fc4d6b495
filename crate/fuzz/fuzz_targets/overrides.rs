#![no_main]

use libfuzzer_sys::fuzz_target;
use manet_core::config::SimParams;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = SimParams::parse_overrides(s) {
        assert_eq!(SimParams::parse_overrides(&p.to_overrides_text()).expect("printed params parse"), p);
    }
});
