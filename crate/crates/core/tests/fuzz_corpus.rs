//! Replays the checked-in fuzz seeds through the same checks as the fuzz targets.

use std::path::PathBuf;

use spinbath::io::{
    fit_result_key_values, parse_coherence_trace, parse_counts, parse_density_matrix, parse_fit_result_key_values,
    parse_matrix_text, parse_spectrum, parse_xy, spectrum_table, write_coherence_trace, write_counts,
    write_density_matrix,
};
use spinbath::model::SystemConfig;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter_map(|p| {
            let text = String::from_utf8(std::fs::read(&p).ok()?).ok()?;
            Some((p.file_name().unwrap().to_string_lossy().into_owned(), text))
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("config_toml") {
        if let Ok(cfg) = SystemConfig::from_toml_str(&text) {
            parsed += 1;
            assert_eq!(SystemConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg, "{name}");
        }
    }
    assert!(parsed > 0);
}

#[test]
fn density_matrix_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("density_matrix") {
        let _ = parse_matrix_text(&text);
        if let Ok(rho) = parse_density_matrix(&text) {
            parsed += 1;
            let once = write_density_matrix(&rho);
            assert_eq!(write_density_matrix(&parse_density_matrix(&once).unwrap()), once, "{name}");
        }
    }
    assert!(parsed > 0);
}

#[test]
fn counts_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("counts_csv") {
        if let Ok(records) = parse_counts(&text) {
            parsed += 1;
            let once = write_counts(&records);
            assert_eq!(write_counts(&parse_counts(&once).unwrap()), once, "{name}");
        }
    }
    assert!(parsed > 0);
}

#[test]
fn coherence_trace_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("coherence_trace") {
        let _ = parse_xy(&text);
        if let Ok(trace) = parse_coherence_trace(&text) {
            parsed += 1;
            let once = write_coherence_trace(&trace);
            assert_eq!(write_coherence_trace(&parse_coherence_trace(&once).unwrap()), once, "{name}");
        }
    }
    assert!(parsed > 0);
}

#[test]
fn spectrum_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("spectrum_csv") {
        if let Ok(spec) = parse_spectrum(&text) {
            parsed += 1;
            let once = spectrum_table(&spec).to_csv();
            assert_eq!(spectrum_table(&parse_spectrum(&once).unwrap()).to_csv(), once, "{name}");
        }
    }
    assert!(parsed > 0);
}

#[test]
fn fit_result_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("fit_result") {
        if let Ok(fit) = parse_fit_result_key_values(&text) {
            parsed += 1;
            let once = fit_result_key_values(&fit);
            assert_eq!(fit_result_key_values(&parse_fit_result_key_values(&once).unwrap()), once, "{name}");
        }
    }
    assert!(parsed > 0);
}
