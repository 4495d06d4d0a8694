#![no_main]

use libfuzzer_sys::fuzz_target;
use survpfn::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = TrainConfig::from_toml(text);
    }
});
