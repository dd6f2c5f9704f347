#![no_main]

use libfuzzer_sys::fuzz_target;
use tnf_core::formats::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        assert_eq!(ck.encode().as_slice(), data);
        let _ = ck.model_config();
    }
});
