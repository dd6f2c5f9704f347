//! Binary split files: `TNF1` header then one record per case, all
//! little-endian.
//!
//! ```text
//! b"TNF1" | u32 version | u64 n_records
//! record: u64 case_id | u32 ndim | u32 × ndim dims | f32 × Π dims
//!         | u32 n_attr | f32 × n_attr | u32 n_slices | u8 × n_slices | u8 label
//! ```

use tnf_autograd::Tensor;

use super::{checked_numel, Reader};
use crate::data::Case;
use crate::error::Result;

pub const MAGIC: &[u8; 4] = b"TNF1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 16;
const MAX_NDIM: usize = 8;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_record(out: &mut Vec<u8>, c: &Case) {
    out.extend_from_slice(&c.id.to_le_bytes());
    let s = c.volume.shape();
    put_u32(out, s.len());
    for &d in s {
        put_u32(out, d);
    }
    for v in c.volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(out, c.tabular.len());
    for v in &c.tabular {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(out, c.slice_labels.len());
    out.extend_from_slice(&c.slice_labels);
    out.push(c.label);
}

/// Encoded split and the byte offset of every record.
pub fn encode_split(cases: &[Case]) -> (Vec<u8>, Vec<u64>) {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cases.len() as u64).to_le_bytes());
    let mut offsets = Vec::with_capacity(cases.len());
    for c in cases {
        offsets.push(out.len() as u64);
        encode_record(&mut out, c);
    }
    (out, offsets)
}

fn decode_record(r: &mut Reader<'_>) -> Result<Case> {
    let id = r.u64()?;
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(r.err(format!("image rank {ndim} outside 1..={MAX_NDIM}")));
    }
    let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let numel = checked_numel(&dims).ok_or_else(|| r.err(format!("invalid image dims {dims:?}")))?;
    let payload = r.f32s(numel)?;
    let volume = Tensor::new(dims, payload).map_err(|e| r.err(e))?;
    let n_attr = r.u32()? as usize;
    let tabular = r.f32s(n_attr)?;
    let n_slices = r.u32()? as usize;
    let slice_labels = r.items(n_slices, 1)?.to_vec();
    let label = r.u8()?;
    let case = Case {
        id,
        volume,
        tabular,
        slice_labels,
        label,
    };
    case.validate()?;
    Ok(case)
}

/// Decode a split, returning the cases and their record offsets.
pub fn decode_split(bytes: &[u8]) -> Result<(Vec<Case>, Vec<u64>)> {
    let mut r = Reader::new(bytes, "dataset");
    if r.bytes(4)? != MAGIC {
        return Err(r.err("bad magic (expected TNF1)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let n = r.u64()?;
    // Every record occupies well over 16 bytes; bound the count by the input.
    if n > (r.remaining() / 16) as u64 {
        return Err(r.err(format!("{n} records cannot fit in {} bytes", r.remaining())));
    }
    let mut cases = Vec::with_capacity(n as usize);
    let mut offsets = Vec::with_capacity(n as usize);
    for _ in 0..n {
        offsets.push(r.pos() as u64);
        cases.push(decode_record(&mut r)?);
    }
    r.finish()?;
    Ok((cases, offsets))
}
