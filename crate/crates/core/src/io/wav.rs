//! RIFF/WAVE reading (16-bit PCM, 32-bit PCM, 32-bit float; any channel
//! count) and 16-bit PCM writing.

use std::path::Path;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::ByteReader;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Decoded audio before downmix and resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved samples in `[-1, 1]`.
    pub samples: Vec<f64>,
}

impl WavData {
    /// Average the channels.
    pub fn mono(&self) -> Vec<f64> {
        let c = self.channels as usize;
        if c == 1 {
            return self.samples.clone();
        }
        self.samples
            .chunks_exact(c)
            .map(|f| f.iter().sum::<f64>() / c as f64)
            .collect()
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn decode_wav(bytes: &[u8]) -> Result<WavData> {
    let mut r = ByteReader { bytes, pos: 0 };
    if r.take(4)? != b"RIFF" {
        return Err(Error::format(0, "missing RIFF header"));
    }
    r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(Error::format(8, "missing WAVE form type"));
    }
    let mut format: Option<(Format, u64)> = None;
    loop {
        let chunk_at = r.pos as u64;
        let id = r.take(4)?;
        let size = r.u32()? as usize;
        let body_at = r.pos as u64;
        let body = r.take(size)?;
        if size % 2 == 1 && r.pos < bytes.len() {
            r.pos += 1;
        }
        match id {
            b"fmt " => format = Some((parse_format(body, body_at)?, chunk_at)),
            b"data" => {
                let (fmt, _) = format.ok_or_else(|| {
                    Error::format(chunk_at, "data chunk precedes fmt chunk")
                })?;
                return decode_samples(&fmt, body, body_at);
            }
            _ => {}
        }
    }
}

fn parse_format(body: &[u8], at: u64) -> Result<Format> {
    let mut r = ByteReader { bytes: body, pos: 0 };
    let mut tag = r.u16().map_err(|_| Error::format(at, "fmt chunk too short"))?;
    let channels = r.u16().map_err(|_| Error::format(at + 2, "fmt chunk too short"))?;
    let sample_rate = r.u32().map_err(|_| Error::format(at + 4, "fmt chunk too short"))?;
    r.take(6).map_err(|_| Error::format(at + 8, "fmt chunk too short"))?;
    let bits = r.u16().map_err(|_| Error::format(at + 14, "fmt chunk too short"))?;
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the subformat GUID
        r.take(8).map_err(|_| Error::format(at + 16, "extensible fmt chunk too short"))?;
        tag = r.u16().map_err(|_| Error::format(at + 24, "extensible fmt chunk too short"))?;
    }
    if channels == 0 {
        return Err(Error::format(at + 2, "zero channels"));
    }
    if sample_rate == 0 {
        return Err(Error::format(at + 4, "zero sample rate"));
    }
    match (tag, bits) {
        (FORMAT_PCM, 16) | (FORMAT_PCM, 32) | (FORMAT_FLOAT, 32) => Ok(Format {
            tag,
            channels,
            sample_rate,
            bits,
        }),
        _ => Err(Error::format(
            at,
            format!("unsupported codec: format tag {tag}, {bits} bits"),
        )),
    }
}

fn decode_samples(fmt: &Format, body: &[u8], at: u64) -> Result<WavData> {
    let width = fmt.bits as usize / 8;
    let frame = width * fmt.channels as usize;
    if body.len() % frame != 0 {
        return Err(Error::format(
            at + (body.len() - body.len() % frame) as u64,
            "data chunk ends mid-frame",
        ));
    }
    let samples: Vec<f64> = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_PCM, _) => body
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64 / 2147483648.0)
            .collect(),
        _ => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::format(at + (i * width) as u64, "non-finite float sample"));
    }
    if samples.is_empty() {
        return Err(Error::format(at, "no samples"));
    }
    Ok(WavData {
        sample_rate: fmt.sample_rate,
        channels: fmt.channels,
        samples,
    })
}

pub fn read_wav_raw(path: impl AsRef<Path>) -> Result<WavData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Read a WAV file as mono at 16 kHz, with samples clamped to `[-1, 1]`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let data = read_wav_raw(path)?;
    let mono: Vec<f64> = data.mono().into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    Waveform::new(mono, data.sample_rate)?.resampled(SAMPLE_RATE)
}

/// 16-bit PCM mono encoding with round-half-even quantization.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.len();
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + 2 * n) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&((2 * n) as u32).to_le_bytes());
    for &s in w.samples() {
        let q = (s * 32768.0).round_ties_even().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}
