//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   "AVSICKPT"            8 bytes
//! version u32                   currently 1
//! count   u32                   number of records
//! record  * count:
//!   name_len u32, name (UTF-8)
//!   dtype    u8                 0 = f32, 1 = f64, 2 = u64
//!   ndim     u32, dims u64 * ndim
//!   payload  numel * element size
//! ```

use std::path::Path;

use super::{DType, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AVSICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_U64: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl RecordData {
    fn len(&self) -> usize {
        match self {
            RecordData::F32(v) => v.len(),
            RecordData::F64(v) => v.len(),
            RecordData::U64(v) => v.len(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            RecordData::F32(_) => DType::F32.code(),
            RecordData::F64(_) => DType::F64.code(),
            RecordData::U64(_) => DTYPE_U64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            RecordData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            RecordData::F64(v) => v.clone(),
            RecordData::U64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => RecordData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => RecordData::F64(t.to_f64_vec()),
        };
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_f64(&self.shape, &self.data.to_f64())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn push_params<T: Scalar>(&mut self, store: &ParamStore<T>) {
        for (_, p) in store.iter() {
            self.push(Record::from_tensor(&p.name, &p.value));
        }
    }

    /// Overwrite every parameter of `store` from the same-named record.
    pub fn load_params<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter_mut() {
            let rec = self
                .get(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if rec.shape != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    rec.shape,
                    p.value.shape()
                )));
            }
            p.value = rec.to_tensor()?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.code());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.data {
                RecordData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                RecordData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                RecordData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(8, format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_at = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(name_at as u64, "record name is not UTF-8"))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::new();
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = r.u64()? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::format(r.pos as u64, "record size overflows"))?;
                shape.push(d);
            }
            let width = match dtype {
                0 => 4,
                1 | DTYPE_U64 => 8,
                other => {
                    return Err(Error::format(dtype_at as u64, format!("unknown dtype {other}")))
                }
            };
            let len = numel
                .checked_mul(width)
                .ok_or_else(|| Error::format(r.pos as u64, "record size overflows"))?;
            let payload = r.take(len)?;
            let data = match dtype {
                0 => RecordData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => RecordData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                _ => RecordData::U64(
                    payload
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            debug_assert_eq!(data.len(), numel);
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last record"));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Cursor over a byte slice whose errors carry the failing offset.
pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.pos as u64,
                    format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
