#![no_main]

use libfuzzer_sys::fuzz_target;
use oqr_cli::RunConfig;

// The first byte picks JSON (odd) or TOML (even).
fuzz_target!(|data: &[u8]| {
    let Some((&flag, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text, flag % 2 == 1) {
        if cfg.validate().is_ok() {
            assert!(!cfg.method_matrix().is_empty());
            let _ = cfg.base_training();
        }
    }
});
