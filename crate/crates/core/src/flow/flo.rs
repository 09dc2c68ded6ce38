//! Middlebury `.flo` files: `f32` magic `202021.25`, `i32` width and height,
//! then row-major interleaved `(u, v)` `f32` pairs, all little-endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::FlowField;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const FLO_MAGIC: f32 = 202021.25;
const MAX_DIM: i32 = 1 << 16;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = flow.dim();
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(flow.v.iter()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn le4(bytes: &[u8], offset: usize) -> Result<[u8; 4]> {
    bytes
        .get(offset..offset + 4)
        .map(|b| [b[0], b[1], b[2], b[3]])
        .ok_or_else(|| Error::parse(bytes.len(), "unexpected end of .flo data"))
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let magic = f32::from_le_bytes(le4(bytes, 0)?);
    if magic != FLO_MAGIC {
        return Err(Error::parse(0, format!("bad .flo magic {magic}")));
    }
    let w = i32::from_le_bytes(le4(bytes, 4)?);
    let h = i32::from_le_bytes(le4(bytes, 8)?);
    if !(1..=MAX_DIM).contains(&w) {
        return Err(Error::parse(4, format!("invalid width {w}")));
    }
    if !(1..=MAX_DIM).contains(&h) {
        return Err(Error::parse(8, format!("invalid height {h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {w}x{h} flow, found {}", bytes.len()),
        ));
    }
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for (k, chunk) in bytes[12..].chunks_exact(8).enumerate() {
        let (y, x) = (k / w, k % w);
        u[[y, x]] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        v[[y, x]] = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as f64;
    }
    FlowField::new(u, v).map_err(|_| Error::parse(12, "non-finite flow value"))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    write_atomic(path.as_ref(), &encode_flo(flow))
}
