#![no_main]

use libfuzzer_sys::fuzz_target;
use tnf_core::formats::manifest::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::from_toml(text) {
        let again = DatasetManifest::from_toml(&m.to_toml()).expect("re-parse of a valid manifest");
        assert_eq!(again.to_toml(), m.to_toml());
    }
});
