//! Dense row-major `f32` tensors and the BVPT file format.
//!
//! Layout of a BVPT file (all integers little-endian):
//!
//! ```text
//! magic   b"BVPT"
//! version u16        (currently 1)
//! dtype   u8         (0 = f32)
//! ndim    u8
//! shape   ndim x u32
//! payload prod(shape) x f32, row-major
//! ```

use std::io::{Read, Write};

use crate::error::{BevError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"BVPT";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(BevError::validation(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(TENSOR_MAGIC)?;
        out.write_all(&TENSOR_VERSION.to_le_bytes())?;
        out.write_all(&[DTYPE_F32, self.shape.len() as u8])?;
        for &dim in &self.shape {
            let dim = u32::try_from(dim)
                .map_err(|_| BevError::validation(format!("dimension {dim} exceeds u32")))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.take(4, "magic")?;
        if magic != TENSOR_MAGIC {
            return Err(cur.error(0, "magic", format!("expected \"BVPT\", found {magic:?}")));
        }
        let version = cur.u16("version")?;
        if version != TENSOR_VERSION {
            return Err(cur.error(4, "version", format!("unsupported version {version}")));
        }
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(cur.error(6, "dtype", format!("unsupported dtype code {dtype}")));
        }
        let ndim = cur.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for i in 0..ndim {
            shape.push(cur.u32(&format!("shape[{i}]"))? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| cur.error(8, "shape", "element count overflows".into()))?;
        let payload = cur.take(
            len.checked_mul(4)
                .ok_or_else(|| cur.error(8, "shape", "payload size overflows".into()))?,
            "payload",
        )?;
        if cur.remaining() != 0 {
            return Err(cur.error(
                cur.pos as u64,
                "payload",
                format!("{} trailing bytes", cur.remaining()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self { shape, data })
    }
}

/// Bounds-checked little-endian reader that reports byte offsets and field
/// names on failure.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, offset: u64, field: &str, message: String) -> BevError {
        BevError::Parse {
            field: field.to_string(),
            offset: Some(offset),
            message,
        }
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                self.pos as u64,
                field,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"BVPT");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn truncated_payload_names_offset_and_field() {
        let bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        let err = Tensor::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        match err {
            BevError::Parse { field, offset, .. } => {
                assert_eq!(field, "payload");
                assert_eq!(offset, Some(12));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = Tensor::from_bytes(&bytes[..9]).unwrap_err();
        assert!(matches!(err, BevError::Parse { ref field, offset: Some(8), .. } if field == "shape[0]"));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut bytes = Tensor::zeros(vec![1]).to_bytes();
        bytes[6] = 3;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(BevError::Parse { ref field, .. }) if field == "dtype"));
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(BevError::Parse { ref field, .. }) if field == "magic"));
    }

    #[test]
    fn shape_length_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(0usize..5, 0..4), seed in any::<u32>()) {
            let len: usize = shape.iter().product();
            let data: Vec<f32> = (0..len).map(|i| (i as f32 + seed as f32).sin()).collect();
            let t = Tensor::new(shape, data).unwrap();
            prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
