#![no_main]

use libfuzzer_sys::fuzz_target;
use tnf_core::formats::dataset::{decode_split, encode_split};

fuzz_target!(|data: &[u8]| {
    if let Ok((cases, offsets)) = decode_split(data) {
        let (bytes, again) = encode_split(&cases);
        assert_eq!(offsets, again);
        assert_eq!(bytes.as_slice(), data);
    }
});
