//! Heatmap volumes: raw little-endian `f32` values (last axis fastest) with
//! a `key = value` text header alongside.
//!
//! ```text
//! format = tnf-heatmap
//! version = 1
//! dtype = f32
//! endian = little
//! dims = 8 8 8
//! spacing = 1 1 1
//! branch = fusion
//! class = 1
//! layer = 1
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::Reader;
use crate::error::{Error, Result};
use crate::explain::Heatmap;
use crate::model::Branch;

pub const FORMAT: &str = "tnf-heatmap";
pub const VERSION: u32 = 1;
const KEYS: [&str; 9] = ["format", "version", "dtype", "endian", "dims", "spacing", "branch", "class", "layer"];
/// Largest volume a header may declare (2^28 voxels).
pub const MAX_VOXELS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub branch: Branch,
    pub class: usize,
    pub layer: usize,
}

fn bad(msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("heatmap header: {msg}"))
}

fn triple<T: std::str::FromStr>(key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(bad(format!("`{key}` needs 3 values, got {}", parts.len())));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| bad(format!("`{key}`: cannot parse {p:?}")))?);
    }
    Ok(out.try_into().ok().expect("three values"))
}

impl HeatmapHeader {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn to_text(&self) -> String {
        let [a, b, c] = self.dims;
        let [x, y, z] = self.spacing;
        format!(
            "format = {FORMAT}\nversion = {VERSION}\ndtype = f32\nendian = little\ndims = {a} {b} {c}\nspacing = {x} {y} {z}\nbranch = {}\nclass = {}\nlayer = {}\n",
            self.branch.name(),
            self.class,
            self.layer
        )
    }

    /// Strict parse: every key exactly once, nothing else, comments with `#`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(bad(format!("unknown key `{k}`")));
            }
            if kv.insert(k, v.trim()).is_some() {
                return Err(bad(format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing key `{k}`")));
        let expect = |k: &str, want: &str| -> Result<()> {
            let v = get(k)?;
            if v != want {
                return Err(bad(format!("`{k}` is {v:?}, only {want:?} is supported")));
            }
            Ok(())
        };
        expect("format", FORMAT)?;
        expect("version", &VERSION.to_string())?;
        expect("dtype", "f32")?;
        expect("endian", "little")?;
        let dims: [usize; 3] = triple("dims", get("dims")?)?;
        let n = dims.iter().try_fold(1usize, |a, &d| if d == 0 { None } else { a.checked_mul(d) });
        if !n.is_some_and(|n| n <= MAX_VOXELS) {
            return Err(bad(format!("dims {dims:?} are empty or too large")));
        }
        let spacing: [f64; 3] = triple("spacing", get("spacing")?)?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(bad("spacing must be positive and finite"));
        }
        let branch = get("branch")?.parse().map_err(|e: Error| bad(e))?;
        let class = get("class")?.parse().map_err(|_| bad("`class` is not an integer"))?;
        let layer = get("layer")?.parse().map_err(|_| bad("`layer` is not an integer"))?;
        Ok(HeatmapHeader {
            dims,
            spacing,
            branch,
            class,
            layer,
        })
    }

    pub fn of(h: &Heatmap) -> Self {
        let s = h.upsampled.shape();
        HeatmapHeader {
            dims: [s[0], s[1], s[2]],
            spacing: [1.0; 3],
            branch: h.branch,
            class: h.class,
            layer: h.layer,
        }
    }
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_values(header: &HeatmapHeader, bytes: &[u8]) -> Result<Vec<f32>> {
    let mut r = Reader::new(bytes, "heatmap volume");
    let v = r.f32s(header.voxels())?;
    r.finish()?;
    Ok(v)
}

/// `<stem>.raw` and `<stem>.hdr`, holding the upsampled map.
pub fn write_heatmap(stem: &Path, h: &Heatmap) -> Result<(PathBuf, PathBuf)> {
    let raw = stem.with_extension("raw");
    let hdr = stem.with_extension("hdr");
    fs::write(&raw, encode_values(h.upsampled.data())).map_err(|e| Error::io(&raw, e))?;
    fs::write(&hdr, HeatmapHeader::of(h).to_text()).map_err(|e| Error::io(&hdr, e))?;
    Ok((raw, hdr))
}

pub fn read_heatmap(stem: &Path) -> Result<(HeatmapHeader, Vec<f32>)> {
    let raw = stem.with_extension("raw");
    let hdr = stem.with_extension("hdr");
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let header = HeatmapHeader::parse(&text)?;
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let values = decode_values(&header, &bytes)?;
    Ok((header, values))
}
