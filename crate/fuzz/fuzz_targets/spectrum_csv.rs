#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::io::{parse_spectrum, spectrum_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = parse_spectrum(text) {
        let once = spectrum_table(&spec).to_csv();
        let again = parse_spectrum(&once).expect("re-parse");
        assert_eq!(spectrum_table(&again).to_csv(), once);
    }
});
