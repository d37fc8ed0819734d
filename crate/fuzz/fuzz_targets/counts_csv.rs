#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::io::{parse_counts, write_counts};
use spinbath::tomography::readout_probability;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_counts(text) {
        for r in &records {
            let _ = readout_probability(r);
        }
        let once = write_counts(&records);
        let again = parse_counts(&once).expect("re-parse");
        assert_eq!(write_counts(&again), once);
    }
});
