#![no_main]

use libfuzzer_sys::fuzz_target;
use spinbath::model::SystemConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SystemConfig::from_toml_str(text) {
        let back = SystemConfig::from_toml_str(&cfg.to_toml_string()).expect("re-parse");
        assert_eq!(back, cfg);
    }
});
