#![no_main]

use libfuzzer_sys::fuzz_target;
use manet_core::metrics::TraceRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(r) = s.parse::<TraceRecord>() {
        // Accepted lines are canonical: printing gives back the same text.
        assert_eq!(r.to_string(), s);
    }
});
