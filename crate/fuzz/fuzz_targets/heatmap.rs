#![no_main]

//! Input: header text, a NUL byte, then the raw little-endian values.

use libfuzzer_sys::fuzz_target;
use tnf_core::formats::heatmap::{decode_values, HeatmapHeader};

fuzz_target!(|data: &[u8]| {
    let (head, raw) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    let Ok(text) = std::str::from_utf8(head) else { return };
    if let Ok(h) = HeatmapHeader::parse(text) {
        assert_eq!(HeatmapHeader::parse(&h.to_text()).expect("re-parse"), h);
        if let Ok(v) = decode_values(&h, raw) {
            assert_eq!(v.len(), h.voxels());
        }
    }
});
