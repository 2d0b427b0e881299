//! Visual feature files.
//!
//! ```text
//! magic   "AVF1"
//! version u32 (1)
//! dim     u32
//! frames  u32
//! fps     f32
//! payload frames * dim little-endian f32, frame-major
//! ```
//! Frame-major order lets a producer append frames without rewriting the
//! payload (only the header's frame count changes).

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::VisualFeatureSequence;
use crate::nn::ByteReader;

pub const FEATURE_MAGIC: &[u8; 4] = b"AVF1";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(v: &VisualFeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(v.frames() as u32).to_le_bytes());
    out.extend_from_slice(&v.fps().to_le_bytes());
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<VisualFeatureSequence> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(4)? != FEATURE_MAGIC {
        return Err(Error::format(0, "bad feature-file magic"));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::format(4, format!("unsupported feature-file version {version}")));
    }
    let dim = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let fps = r.f32()?;
    if dim == 0 || frames == 0 {
        return Err(Error::format(8, "feature file has zero width or zero frames"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::format(16, format!("invalid frame rate {fps}")));
    }
    let expected = dim
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(8, "payload size overflows"))?;
    let payload = r.take(expected)?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after payload"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((HEADER_LEN + 4 * i) as u64, "non-finite feature value"));
    }
    VisualFeatureSequence::new(dim, fps, data)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<VisualFeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_features(v: &VisualFeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(v)).map_err(|e| Error::io(path, e))
}
