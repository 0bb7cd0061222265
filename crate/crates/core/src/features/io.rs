//! FEAT1 feature files and 16-bit PCM WAV I/O.
//!
//! FEAT1 layout: the 5 bytes `FEAT1`, a `u8` version (1), a little-endian
//! `u32` rank, `rank` little-endian `u32` dimensions, then the row-major data
//! as little-endian `f32`. Integer contours are stored as floats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEAT_MAGIC: &[u8; 5] = b"FEAT1";
pub const FEAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl FeatureArray {
    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::dim("feature array", dims, &[data.len()]));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(FEAT_MAGIC);
        out.push(FEAT_VERSION);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(5)?;
        if magic != FEAT_MAGIC {
            return Err(Error::format(0, "missing FEAT1 magic"));
        }
        let version = r.u8()?;
        if version != FEAT_VERSION {
            return Err(Error::format(5, format!("unsupported FEAT version {version}")));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(numel) = numel else {
            return Err(Error::format(r.offset(), "dimension product overflows"));
        };
        let expected = numel.saturating_mul(4);
        if r.remaining() != expected {
            return Err(Error::format(
                r.offset(),
                format!("expected {expected} data bytes for dims {dims:?}, found {}", r.remaining()),
            ));
        }
        let data = r
            .take(expected)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// `(rows, cols)` of a rank-2 array.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Input(format!("expected a rank-2 feature, got dims {:?}", self.dims))),
        }
    }

    /// Length of a rank-1 array.
    pub fn len1(&self) -> Result<usize> {
        match self.dims[..] {
            [n] => Ok(n),
            _ => Err(Error::Input(format!("expected a rank-1 feature, got dims {:?}", self.dims))),
        }
    }
}

/// Little-endian cursor that reports the failing byte offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!("truncated: wanted {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Reads a mono 16-bit PCM WAV, returning samples in `[-1, 1)` and the rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!("expected mono audio, got {} channels", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Input(format!(
            "expected 16-bit PCM, got {} bits ({:?})",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
