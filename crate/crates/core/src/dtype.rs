//! Element types and little-endian payload codecs.

use alloc::vec::Vec;
use core::slice::ChunksExact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub const fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }

    /// Iterates a payload as `f64`. The payload length must be a multiple of
    /// the element size; a trailing partial element is ignored.
    pub fn values(self, bytes: &[u8]) -> Values<'_> {
        Values {
            dtype: self,
            chunks: bytes.chunks_exact(self.size()),
        }
    }

    /// Appends `values` cast to this dtype. Returns the index of the first
    /// element that is non-finite after the cast.
    pub fn encode(self, values: &[f64], out: &mut Vec<u8>) -> Result<(), usize> {
        out.reserve(values.len() * self.size());
        for (i, &v) in values.iter().enumerate() {
            match self {
                DType::F32 => {
                    let x = v as f32;
                    if !x.is_finite() {
                        return Err(i);
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
                DType::F64 => {
                    if !v.is_finite() {
                        return Err(i);
                    }
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(())
    }
}

impl core::fmt::Display for DType {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub struct Values<'a> {
    dtype: DType,
    chunks: ChunksExact<'a, u8>,
}

impl Iterator for Values<'_> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        let c = self.chunks.next()?;
        Some(match self.dtype {
            DType::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
            DType::F64 => f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.chunks.size_hint()
    }
}

impl ExactSizeIterator for Values<'_> {}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_is_encoded_little_endian() {
        assert_eq!(f32_bytes(&[1.0]), [0x00, 0x00, 0x80, 0x3F]);
    }

    #[test]
    fn encode_reports_overflow_on_narrowing() {
        let mut out = Vec::new();
        assert_eq!(DType::F32.encode(&[1.0, 1e300], &mut out), Err(1));
        let mut out = Vec::new();
        assert_eq!(DType::F64.encode(&[f64::NAN], &mut out), Err(0));
    }

    #[test]
    fn values_round_trip() {
        let bytes = f64_bytes(&[1.5, -2.25]);
        let v: Vec<f64> = DType::F64.values(&bytes).collect();
        assert_eq!(v, [1.5, -2.25]);
        let bytes = f32_bytes(&[0.1]);
        assert_eq!(DType::F32.values(&bytes).next(), Some(0.1f32 as f64));
    }
}
