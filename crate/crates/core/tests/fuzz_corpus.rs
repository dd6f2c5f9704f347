//! Replays the fuzz corpus, plus byte-flipped and truncated variants of
//! every seed, through the same checks the fuzz targets make.

use std::path::PathBuf;

use tnf_core::formats::checkpoint::Checkpoint;
use tnf_core::formats::dataset::{decode_split, encode_split};
use tnf_core::formats::heatmap::{decode_values, HeatmapHeader};
use tnf_core::formats::manifest::DatasetManifest;
use tnf_core::formats::runconfig::RunConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn variants(seed: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![seed.to_vec()];
    let step = (seed.len() / 64).max(1);
    for i in (0..seed.len()).step_by(step) {
        for mask in [0x01, 0x80, 0xff] {
            let mut v = seed.to_vec();
            v[i] ^= mask;
            out.push(v);
        }
        out.push(seed[..i].to_vec());
    }
    out
}

fn split(data: &[u8]) -> bool {
    let Ok((cases, offsets)) = decode_split(data) else { return false };
    let (bytes, again) = encode_split(&cases);
    assert_eq!(offsets, again);
    assert_eq!(bytes.as_slice(), data);
    true
}

fn manifest(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    let Ok(m) = DatasetManifest::from_toml(text) else { return false };
    let again = DatasetManifest::from_toml(&m.to_toml()).unwrap();
    assert_eq!(again.to_toml(), m.to_toml());
    true
}

fn run_config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    let Ok(cfg) = RunConfig::from_toml(text) else { return false };
    let echo = cfg.resolved_toml();
    assert_eq!(RunConfig::from_toml(&echo).unwrap().resolved_toml(), echo);
    let _ = cfg.train_config();
    true
}

fn checkpoint(data: &[u8]) -> bool {
    let Ok(ck) = Checkpoint::decode(data) else { return false };
    assert_eq!(ck.encode().as_slice(), data);
    let _ = ck.model_config();
    true
}

fn heatmap(data: &[u8]) -> bool {
    let (head, raw) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    let Ok(text) = std::str::from_utf8(head) else { return false };
    let Ok(h) = HeatmapHeader::parse(text) else { return false };
    assert_eq!(HeatmapHeader::parse(&h.to_text()).unwrap(), h);
    match decode_values(&h, raw) {
        Ok(v) => {
            assert_eq!(v.len(), h.voxels());
            true
        }
        Err(_) => false,
    }
}

fn replay(target: &str, check: fn(&[u8]) -> bool, invalid: &[&str]) {
    for (name, seed) in seeds(target) {
        assert_eq!(check(&seed), !invalid.contains(&name.as_str()), "{target}/{name}");
        for v in variants(&seed) {
            check(&v);
        }
    }
}

#[test]
fn split_corpus() {
    replay("split", split, &["truncated.tnf"]);
}

#[test]
fn manifest_corpus() {
    replay("manifest", manifest, &[]);
}

#[test]
fn run_config_corpus() {
    replay("run_config", run_config, &[]);
}

#[test]
fn checkpoint_corpus() {
    replay("checkpoint", checkpoint, &[]);
}

#[test]
fn heatmap_corpus() {
    replay("heatmap", heatmap, &[]);
}
