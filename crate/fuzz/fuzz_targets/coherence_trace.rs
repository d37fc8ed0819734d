#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::io::{parse_coherence_trace, parse_xy, write_coherence_trace};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_xy(text);
    if let Ok(trace) = parse_coherence_trace(text) {
        let once = write_coherence_trace(&trace);
        let again = parse_coherence_trace(&once).expect("re-parse");
        assert_eq!(write_coherence_trace(&again), once);
    }
});
