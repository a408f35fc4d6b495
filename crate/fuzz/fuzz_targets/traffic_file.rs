#![no_main]

use libfuzzer_sys::fuzz_target;
use manet_core::traffic::TrafficPlan;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(s) = std::str::from_utf8(rest) else { return };
    if let Ok(plan) = TrafficPlan::parse_traffic_file(s, usize::from(n)) {
        let text = plan.to_traffic_file();
        let again = TrafficPlan::parse_traffic_file(&text, usize::from(n)).expect("printed plan parses");
        assert_eq!(again.to_traffic_file(), text);
    }
});
