//! Binary PPM (`P6`) and PGM (`P5`) with 8-bit samples.
//!
//! Values on `[0, 1]` are quantized by round-half-up, `floor(255 v + 0.5)`,
//! clamped to `0..=255`; decoding maps a sample `k` to `k / 255`. Masks are
//! stored as PGM with `255` for hole pixels and read back with `>= 128` as hole.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0
}

/// `P6` for three channels, `P5` for one.
pub fn encode_pnm(frame: ArrayView3<f64>) -> Result<Vec<u8>> {
    let (c, h, w) = frame.dim();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::InvalidArgument(format!("PNM frames need 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(frame[[ch, y, x]]));
            }
        }
    }
    Ok(out)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::parse(0, "expected PNM magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | None) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse(pos, "truncated PNM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos, "expected a decimal number in PNM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start, "number too large in PNM header"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(pos, "expected whitespace after PNM maxval")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::parse(pos, format!("unsupported maxval {maxval}; only 8-bit (255) is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(pos, "PNM image has zero size"));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos,
    })
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Array3<f64>> {
    let hdr = parse_header(bytes)?;
    let len = hdr.channels * hdr.width * hdr.height;
    let data = &bytes[hdr.data_start..];
    if data.len() != len {
        return Err(Error::parse(
            hdr.data_start + data.len().min(len),
            format!("expected {len} raster bytes, found {}", data.len()),
        ));
    }
    Ok(Array3::from_shape_fn((hdr.channels, hdr.height, hdr.width), |(c, y, x)| {
        dequantize(data[(y * hdr.width + x) * hdr.channels + c])
    }))
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_frame(path: impl AsRef<Path>, frame: ArrayView3<f64>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pnm(frame)?)
}

pub fn encode_mask(mask: ArrayView2<f64>) -> Vec<u8> {
    let (h, w) = mask.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&v| if v != 0.0 { 255u8 } else { 0 }));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Array2<f64>> {
    let hdr = parse_header(bytes)?;
    if hdr.channels != 1 {
        return Err(Error::parse(0, "masks must be single-channel PGM (P5)"));
    }
    let img = decode_pnm(bytes)?;
    Ok(img.index_axis(ndarray::Axis(0), 0).mapv(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: ArrayView2<f64>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_mask(mask))
}
