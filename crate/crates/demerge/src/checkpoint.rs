//! In-memory checkpoints and the per-tensor source/sink traits that every
//! streaming operation is written against.

use demerge_core::dtype::{f32_bytes, f64_bytes};
use demerge_core::layout::{plan_layout, validate_index};
use demerge_core::{CheckpointKind, DType, TensorMeta, TensorSpec};

use crate::error::{Error, Result};

/// Random access to the tensors of a checkpoint, in index order.
pub trait TensorSource {
    fn kind(&self) -> CheckpointKind;

    /// Index sorted byte-wise by name.
    fn metas(&self) -> &[TensorMeta];

    /// Replaces the contents of `buf` with the payload of tensor `index`.
    fn read_tensor_into(&self, index: usize, buf: &mut Vec<u8>) -> Result<()>;

    fn read_tensor(&self, index: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.read_tensor_into(index, &mut buf)?;
        Ok(buf)
    }

    fn tensor_index(&self, name: &str) -> Option<usize> {
        self.metas()
            .binary_search_by(|m| m.name.as_str().cmp(name))
            .ok()
    }

    /// Tensor `name` decoded to `f64`.
    fn values(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .tensor_index(name)
            .ok_or_else(|| Error::format(format!("no tensor named '{name}'")))?;
        let bytes = self.read_tensor(i)?;
        Ok(self.metas()[i].dtype.values(&bytes).collect())
    }
}

impl<T: TensorSource + ?Sized> TensorSource for &T {
    fn kind(&self) -> CheckpointKind {
        (**self).kind()
    }
    fn metas(&self) -> &[TensorMeta] {
        (**self).metas()
    }
    fn read_tensor_into(&self, index: usize, buf: &mut Vec<u8>) -> Result<()> {
        (**self).read_tensor_into(index, buf)
    }
}

/// Receives tensors one at a time, strictly ascending by name.
pub trait TensorSink {
    fn put(&mut self, spec: &TensorSpec, bytes: &[u8]) -> Result<()>;
}

/// Order and size checks shared by sinks.
pub(crate) fn check_put(last: Option<&TensorMeta>, spec: &TensorSpec, bytes: &[u8]) -> Result<()> {
    if let Some(prev) = last {
        if prev.name >= spec.name {
            return Err(Error::format(format!(
                "tensor '{}' written after '{}'; sinks need ascending names",
                spec.name, prev.name
            )));
        }
    }
    match spec.byte_length() {
        Some(n) if n == bytes.len() as u64 => Ok(()),
        _ => Err(Error::format(format!(
            "tensor '{}' payload is {} bytes, shape needs {:?}",
            spec.name,
            bytes.len(),
            spec.byte_length()
        ))),
    }
}

/// A named tensor with its raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub spec: TensorSpec,
    pub data: Vec<u8>,
}

impl Tensor {
    pub fn f32(name: impl Into<String>, shape: impl Into<Vec<u64>>, values: &[f32]) -> Self {
        Tensor {
            spec: TensorSpec::new(name, DType::F32, shape),
            data: f32_bytes(values),
        }
    }

    pub fn f64(name: impl Into<String>, shape: impl Into<Vec<u64>>, values: &[f64]) -> Self {
        Tensor {
            spec: TensorSpec::new(name, DType::F64, shape),
            data: f64_bytes(values),
        }
    }
}

/// Fully materialized checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    kind: CheckpointKind,
    metas: Vec<TensorMeta>,
    data: Vec<u8>,
}

impl Checkpoint {
    pub fn empty(kind: CheckpointKind) -> Self {
        Checkpoint {
            kind,
            metas: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds a checkpoint from tensors in any order; the index is sorted by
    /// name. Duplicate names and payloads that disagree with their shape are
    /// format errors.
    pub fn from_tensors(kind: CheckpointKind, tensors: impl IntoIterator<Item = Tensor>) -> Result<Self> {
        let mut tensors: Vec<Tensor> = tensors.into_iter().collect();
        let metas = plan_layout(tensors.iter().map(|t| t.spec.clone()).collect())?;
        tensors.sort_by(|a, b| a.spec.name.cmp(&b.spec.name));
        let mut data = Vec::with_capacity(metas.last().map_or(0, |m| (m.offset + m.length) as usize));
        for (t, m) in tensors.iter().zip(&metas) {
            if t.data.len() as u64 != m.length {
                return Err(Error::format(format!(
                    "tensor '{}' payload is {} bytes, shape needs {}",
                    m.name,
                    t.data.len(),
                    m.length
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Checkpoint { kind, metas, data })
    }

    pub(crate) fn from_parts(kind: CheckpointKind, metas: Vec<TensorMeta>, data: Vec<u8>) -> Result<Self> {
        validate_index(&metas, data.len() as u64)?;
        Ok(Checkpoint { kind, metas, data })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn tensor_bytes(&self, index: usize) -> &[u8] {
        let m = &self.metas[index];
        &self.data[m.offset as usize..(m.offset + m.length) as usize]
    }

    pub fn with_kind(mut self, kind: CheckpointKind) -> Self {
        self.kind = kind;
        self
    }
}

impl TensorSource for Checkpoint {
    fn kind(&self) -> CheckpointKind {
        self.kind
    }

    fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }

    fn read_tensor_into(&self, index: usize, buf: &mut Vec<u8>) -> Result<()> {
        buf.clear();
        buf.extend_from_slice(self.tensor_bytes(index));
        Ok(())
    }
}

/// Sink that assembles a [`Checkpoint`] in memory.
#[derive(Debug)]
pub struct CheckpointBuilder {
    kind: CheckpointKind,
    metas: Vec<TensorMeta>,
    data: Vec<u8>,
}

impl CheckpointBuilder {
    pub fn new(kind: CheckpointKind) -> Self {
        CheckpointBuilder {
            kind,
            metas: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn finish(self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            metas: self.metas,
            data: self.data,
        }
    }
}

impl TensorSink for CheckpointBuilder {
    fn put(&mut self, spec: &TensorSpec, bytes: &[u8]) -> Result<()> {
        check_put(self.metas.last(), spec, bytes)?;
        self.metas.push(TensorMeta {
            name: spec.name.clone(),
            dtype: spec.dtype,
            shape: spec.shape.clone(),
            offset: self.data.len() as u64,
            length: bytes.len() as u64,
        });
        self.data.extend_from_slice(bytes);
        Ok(())
    }
}

/// Checks `(name, dtype, shape)` set equality of two sources.
pub fn check_compatibility(a: &dyn TensorSource, b: &dyn TensorSource) -> Result<()> {
    Ok(demerge_core::check_compatibility(a.metas(), b.metas())?)
}
