//! Tensor index layout for checkpoint containers.
//!
//! A checkpoint's index lists its tensors sorted byte-wise by name, packed
//! back to back in the data section. Everything downstream (merge order,
//! flattening for geometry) relies on this canonical order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dtype::DType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointKind {
    /// Model parameters.
    Model,
    /// Parameter difference between a fine-tuned model and its base.
    Delta,
}

impl CheckpointKind {
    pub const fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Model => "model",
            CheckpointKind::Delta => "delta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "model" => Some(CheckpointKind::Model),
            "delta" => Some(CheckpointKind::Delta),
            _ => None,
        }
    }
}

/// Number of elements in a tensor of the given shape. A scalar (empty
/// shape) holds one element. `None` on overflow.
pub fn element_count(shape: &[u64]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

/// A tensor declaration before it has been placed in a data section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: DType, shape: impl Into<Vec<u64>>) -> Self {
        TensorSpec {
            name: name.into(),
            dtype,
            shape: shape.into(),
        }
    }

    pub fn byte_length(&self) -> Option<u64> {
        element_count(&self.shape)?.checked_mul(self.dtype.size() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub offset: u64,
    pub length: u64,
}

impl TensorMeta {
    pub fn element_count(&self) -> u64 {
        self.length / self.dtype.size() as u64
    }

    /// `(name, dtype, shape)` equality; offsets are irrelevant.
    pub fn same_structure(&self, other: &TensorMeta) -> bool {
        self.name == other.name && self.dtype == other.dtype && self.shape == other.shape
    }

    pub fn spec(&self) -> TensorSpec {
        TensorSpec::new(self.name.clone(), self.dtype, self.shape.clone())
    }
}

/// Sorts `specs` by name and assigns contiguous offsets starting at zero.
pub fn plan_layout(mut specs: Vec<TensorSpec>) -> Result<Vec<TensorMeta>> {
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = specs.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::format(alloc::format!(
            "duplicate tensor name '{}'",
            w[0].name
        )));
    }
    let mut offset = 0u64;
    let mut metas = Vec::with_capacity(specs.len());
    for spec in specs {
        let length = spec
            .byte_length()
            .ok_or_else(|| Error::format(alloc::format!("tensor '{}' is too large", spec.name)))?;
        metas.push(TensorMeta {
            name: spec.name,
            dtype: spec.dtype,
            shape: spec.shape,
            offset,
            length,
        });
        offset = offset
            .checked_add(length)
            .ok_or_else(|| Error::format("data section exceeds u64 range"))?;
    }
    Ok(metas)
}

/// Checks the index invariants against a data section of `data_len` bytes:
/// strictly ascending names, lengths matching shapes, offsets packed from
/// zero with no gaps, and the last tensor ending exactly at `data_len`.
pub fn validate_index(metas: &[TensorMeta], data_len: u64) -> Result<()> {
    let mut expected_offset = 0u64;
    for (i, meta) in metas.iter().enumerate() {
        if i > 0 && metas[i - 1].name >= meta.name {
            return Err(Error::format(alloc::format!(
                "index not sorted by name at '{}'",
                meta.name
            )));
        }
        let length = meta
            .spec()
            .byte_length()
            .ok_or_else(|| Error::format(alloc::format!("tensor '{}' is too large", meta.name)))?;
        if length != meta.length {
            return Err(Error::format(alloc::format!(
                "tensor '{}' declares {} bytes, shape implies {}",
                meta.name,
                meta.length,
                length
            )));
        }
        if meta.offset != expected_offset {
            return Err(Error::format(alloc::format!(
                "tensor '{}' at offset {}, expected {}",
                meta.name,
                meta.offset,
                expected_offset
            )));
        }
        expected_offset = expected_offset
            .checked_add(length)
            .ok_or_else(|| Error::format("data section exceeds u64 range"))?;
    }
    if expected_offset != data_len {
        return Err(Error::format(alloc::format!(
            "index covers {} bytes but data section holds {}",
            expected_offset,
            data_len
        )));
    }
    Ok(())
}

/// Succeeds iff both indexes hold the same `(name, dtype, shape)` set.
/// The error lists every offending name once, in byte-wise order.
pub fn check_compatibility(a: &[TensorMeta], b: &[TensorMeta]) -> Result<()> {
    let index = |metas: &[TensorMeta]| -> BTreeMap<String, (DType, Vec<u64>)> {
        metas
            .iter()
            .map(|m| (m.name.clone(), (m.dtype, m.shape.clone())))
            .collect()
    };
    let (ia, ib) = (index(a), index(b));
    let mut bad: Vec<String> = Vec::new();
    for (name, structure) in &ia {
        if ib.get(name) != Some(structure) {
            bad.push(name.clone());
        }
    }
    for name in ib.keys() {
        if !ia.contains_key(name) {
            bad.push(name.to_string());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        bad.sort();
        Err(Error::Compatibility(bad))
    }
}

/// Canonical flattening of a checkpoint into one long vector: tensors in
/// index order, row-major within each tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatView {
    starts: Vec<u64>,
    len: u64,
}

impl FlatView {
    pub fn new(metas: &[TensorMeta]) -> Self {
        let mut starts = Vec::with_capacity(metas.len());
        let mut len = 0u64;
        for m in metas {
            starts.push(len);
            len += m.element_count();
        }
        FlatView { starts, len }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat position of element `element` of tensor `tensor`.
    pub fn position(&self, tensor: usize, element: u64) -> u64 {
        self.starts[tensor] + element
    }

    /// Inverse of [`FlatView::position`].
    pub fn locate(&self, flat: u64) -> Option<(usize, u64)> {
        if flat >= self.len {
            return None;
        }
        let tensor = self.starts.partition_point(|&s| s <= flat) - 1;
        // zero-sized tensors share a start with their successor
        Some((tensor, flat - self.starts[tensor]))
    }
}
