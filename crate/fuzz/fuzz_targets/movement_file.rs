#![no_main]

use libfuzzer_sys::fuzz_target;
use manet_core::mobility::{Area, MobilityPlan};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = MobilityPlan::parse_movement_file(s, Area::default()) {
        let text = plan.to_movement_file();
        let again = MobilityPlan::parse_movement_file(&text, Area::default()).expect("printed plan parses");
        assert_eq!(again.to_movement_file(), text);
    }
});
