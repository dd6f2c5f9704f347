//! On-disk formats: dataset records, manifests, checkpoints, heatmaps and
//! run configuration.

pub mod checkpoint;
pub mod dataset;
pub mod heatmap;
pub mod manifest;
pub mod runconfig;

use crate::error::{Error, Result};

/// Bounds-checked little-endian cursor. Every read fails cleanly on
/// truncated input, so decoders never allocate more than the input holds.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("{} at byte {}: {msg}", self.what, self.pos))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.err(format!("truncated (need {n} bytes, {} left)", self.remaining())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// `count` items of `width` bytes, checked against the remaining input
    /// before anything is allocated.
    pub fn items(&mut self, count: usize, width: usize) -> Result<&'a [u8]> {
        let n = count
            .checked_mul(width)
            .ok_or_else(|| self.err(format!("{count} items overflow")))?;
        self.bytes(n)
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.items(count, 4)?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("non-finite float"));
        }
        Ok(v)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.err(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Product of extents, refusing overflow and zero extents.
pub(crate) fn checked_numel(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |a, &d| if d == 0 { None } else { a.checked_mul(d) })
}

/// Dotted key path (`table.key`) of the line a TOML error points at.
pub(crate) fn toml_key_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') {
        return None;
    }
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && !l.starts_with("[["))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    Some(match table {
        Some(t) if !t.is_empty() => format!("{t}.{key}"),
        _ => key.to_string(),
    })
}

/// Parse TOML into `T`, naming the offending key in the error message.
pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let key = e.span().and_then(|s| toml_key_at(text, s.start));
        let msg = e.message().trim().to_string();
        match key {
            Some(k) => Error::Config(format!("{what}: key `{k}`: {msg}")),
            None => Error::Config(format!("{what}: {msg}")),
        }
    })
}
