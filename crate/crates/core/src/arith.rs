//! Distribution-vector arithmetic.
//!
//! A distribution vector is the element-wise difference between a model
//! fine-tuned on one data source and its base. A distribution edited model
//! (DEM) adds a weighted sum of such vectors back onto the base:
//!
//! ```text
//! delta_i = tuned_i - base
//! dem     = base + sum_i w_i * delta_i
//! interp  = sum_i w_i * tuned_i            (sum_i w_i = 1)
//! ```
//!
//! The kernels below work one tensor at a time. Weighted sums accumulate in
//! `f64` in the caller's entry order and are cast back to the storage dtype
//! once at the end.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dtype::DType;
use crate::error::{Error, Result};

/// Maximum allowed `|sum(w) - 1|` for interpolation weights.
pub const INTERPOLATION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MergeMode {
    Dem,
    Interpolation,
}

impl MergeMode {
    pub const fn as_str(self) -> &'static str {
        match self {
            MergeMode::Dem => "dem",
            MergeMode::Interpolation => "interpolation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dem" => Some(MergeMode::Dem),
            "interpolation" => Some(MergeMode::Interpolation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub label: String,
    pub weight: f64,
}

/// Per-source merge weights. Entry order is the summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub mode: MergeMode,
    pub entries: Vec<WeightEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightWarning {
    Negative { label: String, weight: f64 },
    AboveOne { label: String, weight: f64 },
}

impl core::fmt::Display for WeightWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            WeightWarning::Negative { label, weight } => {
                write!(f, "weight for '{label}' is negative ({weight})")
            }
            WeightWarning::AboveOne { label, weight } => {
                write!(f, "weight for '{label}' exceeds 1 ({weight})")
            }
        }
    }
}

impl WeightConfig {
    /// Builds and validates a config.
    pub fn new<L: Into<String>>(
        mode: MergeMode,
        entries: impl IntoIterator<Item = (L, f64)>,
    ) -> Result<Self> {
        let config = WeightConfig {
            mode,
            entries: entries
                .into_iter()
                .map(|(label, weight)| WeightEntry {
                    label: label.into(),
                    weight,
                })
                .collect(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Same weight for every label.
    pub fn uniform<L: Into<String>>(
        mode: MergeMode,
        labels: impl IntoIterator<Item = L>,
        weight: f64,
    ) -> Result<Self> {
        Self::new(mode, labels.into_iter().map(|l| (l, weight)))
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn weight(&self, label: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.label == label)
            .map(|e| e.weight)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    /// Checks the mode invariants. Weights outside `[0, 1]` are legal in both
    /// modes and come back as warnings.
    pub fn validate(&self) -> Result<Vec<WeightWarning>> {
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|p| p.label == e.label) {
                return Err(Error::config(alloc::format!(
                    "duplicate weight label '{}'",
                    e.label
                )));
            }
            if !e.weight.is_finite() {
                return Err(Error::config(alloc::format!(
                    "weight for '{}' is not finite",
                    e.label
                )));
            }
        }
        if self.mode == MergeMode::Interpolation {
            let sum = self.sum();
            if (sum - 1.0).abs() > INTERPOLATION_SUM_TOLERANCE {
                return Err(Error::config(alloc::format!(
                    "interpolation weights sum to {sum}, expected 1"
                )));
            }
        }
        let mut warnings = Vec::new();
        for e in &self.entries {
            if e.weight < 0.0 {
                warnings.push(WeightWarning::Negative {
                    label: e.label.clone(),
                    weight: e.weight,
                });
            } else if e.weight > 1.0 {
                warnings.push(WeightWarning::AboveOne {
                    label: e.label.clone(),
                    weight: e.weight,
                });
            }
        }
        Ok(warnings)
    }

    /// Positions of `labels` in entry order: `result[k]` indexes into
    /// `labels` for the k-th entry. Fails unless the label sets match
    /// one-to-one.
    pub fn align<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        if labels.len() != self.entries.len() {
            return Err(Error::config(alloc::format!(
                "{} weights for {} sources",
                self.entries.len(),
                labels.len()
            )));
        }
        self.entries
            .iter()
            .map(|e| {
                labels
                    .iter()
                    .position(|l| l.as_ref() == e.label)
                    .ok_or_else(|| {
                        Error::config(alloc::format!("no source labelled '{}'", e.label))
                    })
            })
            .collect()
    }
}

/// `out = tuned - base`, evaluated in `dtype`. Returns the first flat index
/// whose difference is not finite.
pub fn difference(dtype: DType, base: &[u8], tuned: &[u8], out: &mut Vec<u8>) -> Result<(), usize> {
    debug_assert_eq!(base.len(), tuned.len());
    out.clear();
    out.reserve(base.len());
    let size = dtype.size();
    for (i, (b, t)) in base.chunks_exact(size).zip(tuned.chunks_exact(size)).enumerate() {
        match dtype {
            DType::F32 => {
                let d = f32::from_le_bytes([t[0], t[1], t[2], t[3]])
                    - f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if !d.is_finite() {
                    return Err(i);
                }
                out.extend_from_slice(&d.to_le_bytes());
            }
            DType::F64 => {
                let d = f64::from_le_bytes(t.try_into().unwrap())
                    - f64::from_le_bytes(b.try_into().unwrap());
                if !d.is_finite() {
                    return Err(i);
                }
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(())
}

/// `f64` accumulator for one tensor.
#[derive(Debug, Default, Clone)]
pub struct Accumulator {
    values: Vec<f64>,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from the additive identity. `-0.0` keeps the sign of a lone
    /// negative-zero term.
    pub fn reset_zero(&mut self, len: usize) {
        self.values.clear();
        self.values.resize(len, -0.0);
    }

    pub fn load(&mut self, dtype: DType, bytes: &[u8]) {
        self.values.clear();
        self.values.extend(dtype.values(bytes));
    }

    /// `acc += weight * payload`. A zero weight is skipped outright so that
    /// the accumulator keeps its bits exactly.
    pub fn add_scaled(&mut self, dtype: DType, bytes: &[u8], weight: f64) {
        debug_assert_eq!(bytes.len() / dtype.size(), self.values.len());
        if weight == 0.0 {
            return;
        }
        for (acc, v) in self.values.iter_mut().zip(dtype.values(bytes)) {
            *acc += weight * v;
        }
    }

    /// Casts to `dtype`, writing into `out`. Returns the first non-finite
    /// flat index.
    pub fn finish(&self, dtype: DType, out: &mut Vec<u8>) -> Result<(), usize> {
        out.clear();
        dtype.encode(&self.values, out)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::{f32_bytes, f64_bytes};
    use alloc::vec;

    fn f64s(dtype: DType, bytes: &[u8]) -> Vec<f64> {
        dtype.values(bytes).collect()
    }

    #[test]
    fn difference_is_elementwise() {
        let mut out = Vec::new();
        difference(DType::F32, &f32_bytes(&[1.0, 2.0]), &f32_bytes(&[1.5, 1.0]), &mut out).unwrap();
        assert_eq!(f64s(DType::F32, &out), [0.5, -1.0]);
    }

    #[test]
    fn difference_of_large_f64_is_exact() {
        let mut out = Vec::new();
        difference(DType::F64, &f64_bytes(&[1e16]), &f64_bytes(&[1e16 + 2.0]), &mut out).unwrap();
        assert_eq!(f64s(DType::F64, &out), [2.0]);
    }

    #[test]
    fn difference_flags_overflow() {
        let mut out = Vec::new();
        let r = difference(
            DType::F32,
            &f32_bytes(&[0.0, -f32::MAX]),
            &f32_bytes(&[0.0, f32::MAX]),
            &mut out,
        );
        assert_eq!(r, Err(1));
        let r = difference(DType::F64, &f64_bytes(&[f64::NAN]), &f64_bytes(&[0.0]), &mut out);
        assert_eq!(r, Err(0));
    }

    #[test]
    fn compose_single_vector() {
        let mut acc = Accumulator::new();
        acc.load(DType::F32, &f32_bytes(&[1.0, 2.0]));
        acc.add_scaled(DType::F32, &f32_bytes(&[0.5, -1.0]), 0.25);
        let mut out = Vec::new();
        acc.finish(DType::F32, &mut out).unwrap();
        assert_eq!(f64s(DType::F32, &out), [1.125, 1.75]);
    }

    #[test]
    fn zero_weight_keeps_bits() {
        let base = f32_bytes(&[-0.0, 3.0]);
        let mut acc = Accumulator::new();
        acc.load(DType::F32, &base);
        acc.add_scaled(DType::F32, &f32_bytes(&[1.0, 1.0]), 0.0);
        let mut out = Vec::new();
        acc.finish(DType::F32, &mut out).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn interpolation_midpoint() {
        let mut acc = Accumulator::new();
        acc.reset_zero(2);
        acc.add_scaled(DType::F64, &f64_bytes(&[0.0, 0.0]), 0.5);
        acc.add_scaled(DType::F64, &f64_bytes(&[2.0, 4.0]), 0.5);
        assert_eq!(acc.values(), [1.0, 2.0]);
    }

    #[test]
    fn interpolation_weights_must_sum_to_one() {
        let err = WeightConfig::new(MergeMode::Interpolation, [("a", 0.5), ("b", 0.4)]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = WeightConfig::new(MergeMode::Interpolation, [("a", 1.5), ("b", -0.5)]).unwrap();
        assert_eq!(ok.validate().unwrap().len(), 2);
        WeightConfig::new(MergeMode::Dem, [("a", 0.5), ("b", 0.4)]).unwrap();
    }

    #[test]
    fn weights_reject_duplicates_and_non_finite() {
        assert!(WeightConfig::new(MergeMode::Dem, [("a", 0.5), ("a", 0.4)]).is_err());
        assert!(WeightConfig::new(MergeMode::Dem, [("a", f64::INFINITY)]).is_err());
    }

    #[test]
    fn align_follows_entry_order() {
        let w = WeightConfig::new(MergeMode::Dem, [("b", 0.1), ("a", 0.2)]).unwrap();
        assert_eq!(w.align(&["a", "b"]).unwrap(), vec![1, 0]);
        assert!(w.align(&["a", "c"]).is_err());
        assert!(w.align(&["a"]).is_err());
    }
}
