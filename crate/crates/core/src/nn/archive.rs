//! Binary tensor container used for checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   b"TAADCKPT"
//! version      u32       currently 1
//! meta_len     u32       length of the metadata block in bytes
//! meta         [u8]      UTF-8 JSON document (architecture, schema, settings)
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u32
//!   name       [u8]      UTF-8
//!   ndim       u32
//!   dims       u64 * ndim
//!   values     f64 * prod(dims), row-major, IEEE-754 little-endian
//! ```
//!
//! Tensors are written in insertion order, so identical content gives identical bytes.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TAADCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_array1(name: impl Into<String>, a: &Array1<f64>) -> Self {
        Self::vector(name, a.to_vec())
    }

    pub fn from_array2(name: impl Into<String>, a: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            shape: vec![a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub meta: String,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    pub fn new(meta: String, tensors: Vec<NamedTensor>) -> Self {
        Self { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn array1(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        if t.shape != [len] {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected [{len}]",
                t.shape
            )));
        }
        Ok(Array1::from(t.data.clone()))
    }

    pub fn array2(&self, name: &str, dim: (usize, usize)) -> Result<Array2<f64>> {
        let t = self.get(name)?;
        if t.shape != [dim.0, dim.1] {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected [{}, {}]",
                t.shape, dim.0, dim.1
            )));
        }
        Array2::from_shape_vec(dim, t.data.clone()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta = String::from_utf8(r.block()?.to_vec())
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = String::from_utf8(r.block()?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self { meta, tensors })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let a = Archive::new("{}".into(), vec![NamedTensor::vector("x", vec![1.5])]);
        let b = a.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(&b[16..18], b"{}");
        assert_eq!(&b[b.len() - 8..], &1.5f64.to_le_bytes());
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let a = Archive::new("m".into(), vec![NamedTensor::vector("x", vec![1.0, 2.0])]);
        let b = a.to_bytes();
        assert!(Archive::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Archive::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            values in proptest::collection::vec(proptest::num::f64::ANY, 0..40),
            rows in 1usize..4,
            meta in "[a-z{}\":,]{0,20}",
        ) {
            let cols = values.len() / rows;
            let m = Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap();
            let a = Archive::new(meta, vec![
                NamedTensor::from_array2("m", &m),
                NamedTensor::vector("v", values.clone()),
            ]);
            let back = Archive::from_bytes(&a.to_bytes()).unwrap();
            prop_assert_eq!(back.meta, a.meta.clone());
            for (x, y) in back.tensors.iter().zip(&a.tensors) {
                prop_assert_eq!(&x.shape, &y.shape);
                let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }
}
