#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::io::{parse_density_matrix, parse_matrix_text, write_density_matrix};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_matrix_text(text);
    if let Ok(rho) = parse_density_matrix(text) {
        // printed form is a fixed point after one pass
        let once = write_density_matrix(&rho);
        let again = parse_density_matrix(&once).expect("re-parse");
        assert_eq!(write_density_matrix(&again), once);
    }
});
