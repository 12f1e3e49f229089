#![no_main]

use libfuzzer_sys::fuzz_target;
use oqr::nn::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ckpt) = Checkpoint::from_json(text) else {
        return;
    };
    let config = ckpt.config.clone();
    if let Ok(model) = ckpt.clone().into_model() {
        assert_eq!(Checkpoint::from_model(&model, config), ckpt);
    }
});
