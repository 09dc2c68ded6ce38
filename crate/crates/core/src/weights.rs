//! `FGDW` weight files.
//!
//! Layout (little-endian): magic `FGDW`, `u32` version, then until end of
//! file, one record per tensor: `u16` name length, UTF-8 name, `u8` rank,
//! `u32` per dimension, and the `f32` payload in row-major order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array4, ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FGDW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_array(name: impl Into<String>, array: &ArrayD<f64>) -> Self {
        Self {
            name: name.into(),
            shape: array.shape().to_vec(),
            data: array.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.iter().map(|&v| v as f64).collect())
            .expect("shape and payload agree by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub tensors: Vec<NamedTensor>,
}

impl WeightFile {
    pub fn push(&mut self, name: &str, array: ArrayD<f64>) {
        self.tensors.push(NamedTensor::from_array(name, &array));
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("weight file has no tensor `{name}`")))
    }

    pub fn array4(&self, name: &str, expected: [usize; 4]) -> Result<Array4<f64>> {
        let t = self.get(name)?;
        if t.shape != expected {
            return Err(Error::shape("weight tensor", &expected, &t.shape));
        }
        Ok(t.to_array().into_dimensionality().expect("rank checked"))
    }

    pub fn array1(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        if t.shape != [len] {
            return Err(Error::shape("weight tensor", &[len], &t.shape));
        }
        Ok(t.to_array().into_dimensionality().expect("rank checked"))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor `{}` has too many dims", t.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(rank);
            for &d in &t.shape {
                let d = u32::try_from(d)
                    .map_err(|_| Error::InvalidArgument(format!("dimension {d} too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::parse(0, "bad weight file magic (expected FGDW)"));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::parse(4, format!("unsupported weight file version {version}")));
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let start = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::parse(start + 2, "tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::parse(start, "tensor size overflows"))?;
            let payload = r.take(count.checked_mul(4).ok_or_else(|| Error::parse(start, "tensor size overflows"))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse(self.pos, "unexpected end of weight file")),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_layout() {
        let mut wf = WeightFile::default();
        wf.push("b", ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -2.0]).unwrap());
        let bytes = wf.encode().unwrap();
        let mut expected = b"FGDW".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'b');
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(WeightFile::decode(&bytes).unwrap(), wf);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let mut wf = WeightFile::default();
        wf.push("w", ArrayD::zeros(IxDyn(&[2, 2])));
        let bytes = wf.encode().unwrap();
        assert!(matches!(WeightFile::decode(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        assert!(matches!(WeightFile::decode(b"FGDX\x01\0\0\0"), Err(Error::Parse { offset: 0, .. })));
        assert!(WeightFile::decode(b"FGDW\x02\0\0\0").is_err());
        assert!(wf.get("missing").is_err());
        assert!(wf.array4("w", [1, 1, 2, 2]).is_err());
    }
}
