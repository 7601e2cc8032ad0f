//! Per-group asymmetric INT4 quantization.
//!
//! Each group of `group_size` consecutive values stores `scale = (max - min) / 15`
//! and `zero_point = min`; a value maps to `round((x - min) / scale)` clamped
//! to `0..=15`. Codes are packed two per byte, low nibble first.
//!
//! Binary layout (little-endian): magic `I4GQ`, `u32` version, `u32`
//! group_size, `u64` original_len, `f32` scales, `f32` zero points, packed
//! codes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GROUP_SIZE: u32 = 128;
pub const MAGIC: [u8; 4] = *b"I4GQ";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupQuantizedTensor {
    pub codes: Vec<u8>,
    pub scales: Vec<f32>,
    pub zero_points: Vec<f32>,
    pub group_size: u32,
    pub original_len: u64,
}

/// Host bytes of an INT4 backup of `n_params` values: packed codes plus an
/// `f32` scale and zero point per group.
pub fn int4_bytes(n_params: u64, group_size: u32) -> u64 {
    n_params.div_ceil(2) + n_params.div_ceil(u64::from(group_size.max(1))) * 8
}

fn encode(x: f32, zero: f32, scale: f32) -> u8 {
    if scale == 0.0 {
        return 0;
    }
    let q = ((f64::from(x) - f64::from(zero)) / f64::from(scale)).round();
    q.clamp(0.0, 15.0) as u8
}

pub fn quantize_int4(values: &[f32], group_size: u32) -> Result<GroupQuantizedTensor> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot quantize an empty vector".into()));
    }
    if group_size == 0 {
        return Err(Error::InvalidInput("group_size must be >= 1".into()));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at index {pos}")));
    }
    let g = group_size as usize;
    let n_groups = values.len().div_ceil(g);
    let mut scales = Vec::with_capacity(n_groups);
    let mut zero_points = Vec::with_capacity(n_groups);
    let mut codes = vec![0u8; values.len().div_ceil(2)];
    for (gi, group) in values.chunks(g).enumerate() {
        let (lo, hi) = group
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let scale = ((f64::from(hi) - f64::from(lo)) / 15.0) as f32;
        scales.push(scale);
        zero_points.push(lo);
        for (off, &x) in group.iter().enumerate() {
            let idx = gi * g + off;
            let c = encode(x, lo, scale);
            codes[idx / 2] |= if idx % 2 == 0 { c } else { c << 4 };
        }
    }
    Ok(GroupQuantizedTensor {
        codes,
        scales,
        zero_points,
        group_size,
        original_len: values.len() as u64,
    })
}

impl GroupQuantizedTensor {
    pub fn n_groups(&self) -> usize {
        self.scales.len()
    }

    pub fn code(&self, idx: usize) -> u8 {
        let byte = self.codes[idx / 2];
        if idx % 2 == 0 {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: String| Err(Error::Corrupted(m));
        if self.group_size == 0 {
            return corrupt("group_size is 0".into());
        }
        let len = usize::try_from(self.original_len)
            .map_err(|_| Error::Corrupted("original_len does not fit in memory".into()))?;
        let groups = len.div_ceil(self.group_size as usize);
        if self.scales.len() != groups || self.zero_points.len() != groups {
            return corrupt(format!(
                "expected {groups} groups, found {} scales and {} zero points",
                self.scales.len(),
                self.zero_points.len()
            ));
        }
        if self.codes.len() != len.div_ceil(2) {
            return corrupt(format!(
                "expected {} code bytes, found {}",
                len.div_ceil(2),
                self.codes.len()
            ));
        }
        if len % 2 == 1 && self.codes[len / 2] >> 4 != 0 {
            return corrupt("padding nibble is not zero".into());
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.zero_points.iter().any(|z| !z.is_finite()) {
            return corrupt("non-finite or negative group parameters".into());
        }
        Ok(())
    }

    /// `x = code * scale + zero_point`, evaluated in `f64`.
    pub fn dequantize_f64(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let g = self.group_size as usize;
        Ok((0..self.original_len as usize)
            .map(|i| {
                let gi = i / g;
                f64::from(self.code(i)) * f64::from(self.scales[gi]) + f64::from(self.zero_points[gi])
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.scales.len() + self.codes.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.group_size.to_le_bytes());
        out.extend_from_slice(&self.original_len.to_le_bytes());
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for z in &self.zero_points {
            out.extend_from_slice(&z.to_le_bytes());
        }
        out.extend_from_slice(&self.codes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
            return Err(Error::Corrupted("missing INT4 header".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Corrupted(format!("unsupported format version {version}")));
        }
        let group_size = u32_at(8);
        let original_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        if group_size == 0 {
            return Err(Error::Corrupted("group_size is 0".into()));
        }
        let groups = original_len.div_ceil(u64::from(group_size));
        let expected = groups
            .checked_mul(8)
            .and_then(|v| v.checked_add(original_len.div_ceil(2)))
            .and_then(|v| v.checked_add(HEADER_LEN as u64));
        if expected != Some(bytes.len() as u64) {
            return Err(Error::Corrupted(format!(
                "payload is {} bytes, header implies {}",
                bytes.len(),
                expected.map_or_else(|| "overflow".to_string(), |e| e.to_string())
            )));
        }
        let groups = groups as usize;
        let f32s = |start: usize| -> Vec<f32> {
            bytes[start..start + 4 * groups]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        let scales = f32s(HEADER_LEN);
        let zero_points = f32s(HEADER_LEN + 4 * groups);
        let t = Self {
            codes: bytes[HEADER_LEN + 8 * groups..].to_vec(),
            scales,
            zero_points,
            group_size,
            original_len,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Restores values in native `f32` precision.
pub fn dequantize(q: &GroupQuantizedTensor) -> Result<Vec<f32>> {
    Ok(q.dequantize_f64()?.into_iter().map(|v| v as f32).collect())
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 && nb == 0.0 {
        return 1.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
