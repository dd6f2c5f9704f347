#![no_main]

use libfuzzer_sys::fuzz_target;
use tnf_core::formats::runconfig::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        let echo = cfg.resolved_toml();
        let again = RunConfig::from_toml(&echo).expect("re-parse of the resolved config");
        assert_eq!(again.resolved_toml(), echo);
        let _ = cfg.train_config();
    }
});
