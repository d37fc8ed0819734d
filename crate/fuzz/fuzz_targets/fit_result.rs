#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::io::{fit_result_key_values, parse_fit_result_key_values};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(fit) = parse_fit_result_key_values(text) {
        let once = fit_result_key_values(&fit);
        let again = parse_fit_result_key_values(&once).expect("re-parse");
        assert_eq!(fit_result_key_values(&again), once);
    }
});
