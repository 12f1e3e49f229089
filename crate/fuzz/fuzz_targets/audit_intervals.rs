#![no_main]

use libfuzzer_sys::fuzz_target;
use oqr::metrics::EvalConfig;
use oqr_cli::audit::{audit, read_intervals};

fuzz_target!(|data: &[u8]| {
    let Ok(input) = read_intervals(data) else {
        return;
    };
    let b = &input.intervals;
    assert!(b.lo.iter().zip(&b.hi).all(|(l, h)| l <= h));
    assert_eq!(input.x.nrows(), b.len());
    if b.len() <= 200 {
        let mut cfg = EvalConfig::default();
        cfg.wsc.n_directions = 4;
        let _ = audit(&input, Some(&input), &cfg, 0);
    }
});
