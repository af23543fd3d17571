//! Weight-space geometry over flattened checkpoints.
//!
//! All accumulators consume tensors in canonical index order and reduce in
//! `f64`, so a given pair of checkpoints always yields the same bits.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::dtype::DType;
use crate::error::{Error, Result};

/// Group key for tensors that no layer pattern matched.
pub const UNGROUPED: &str = "_ungrouped";

/// Running `sum (a - b)^2`.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct SquaredDistance {
    sum: f64,
}

impl SquaredDistance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, dtype: DType, a: &[u8], b: &[u8]) {
        for (x, y) in dtype.values(a).zip(dtype.values(b)) {
            let d = x - y;
            self.sum += d * d;
        }
    }

    pub fn add_values(&mut self, a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            self.sum += d * d;
        }
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn distance(&self) -> f64 {
        libm::sqrt(self.sum)
    }
}

/// Running dot product and squared norms of two vectors.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct CosineAccumulator {
    dot: f64,
    norm_a: f64,
    norm_b: f64,
}

impl CosineAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, dtype: DType, a: &[u8], b: &[u8]) {
        for (x, y) in dtype.values(a).zip(dtype.values(b)) {
            self.push(x, y);
        }
    }

    pub fn add_values(&mut self, a: &[f64], b: &[f64]) {
        for (&x, &y) in a.iter().zip(b) {
            self.push(x, y);
        }
    }

    #[inline]
    fn push(&mut self, x: f64, y: f64) {
        self.dot += x * y;
        self.norm_a += x * x;
        self.norm_b += y * y;
    }

    pub fn finish(&self) -> Result<f64> {
        cosine_from_parts(self.dot, self.norm_a, self.norm_b)
    }
}

/// `dot / (sqrt(na) * sqrt(nb))`, clamped to `[-1, 1]`.
pub fn cosine_from_parts(dot: f64, norm_a_sq: f64, norm_b_sq: f64) -> Result<f64> {
    if norm_a_sq == 0.0 || norm_b_sq == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let c = dot / (libm::sqrt(norm_a_sq) * libm::sqrt(norm_b_sq));
    Ok(c.clamp(-1.0, 1.0))
}

/// Pairwise dot products of `n` vectors, accumulated tensor by tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    dots: Vec<f64>,
}

impl Gram {
    pub fn new(n: usize) -> Self {
        Gram {
            n,
            dots: alloc::vec![0.0; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds one aligned tensor from each of the `n` vectors.
    pub fn add(&mut self, vectors: &[&[f64]]) {
        assert_eq!(vectors.len(), self.n);
        for i in 0..self.n {
            for j in i..self.n {
                let d: f64 = vectors[i].iter().zip(vectors[j]).map(|(x, y)| x * y).sum();
                self.dots[i * self.n + j] += d;
            }
        }
    }

    pub fn dot(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.dots[i * self.n + j]
    }

    pub fn norm(&self, i: usize) -> f64 {
        libm::sqrt(self.dot(i, i))
    }

    pub fn cosine(&self, i: usize, j: usize) -> Result<f64> {
        if i == j && self.dot(i, i) != 0.0 {
            return Ok(1.0);
        }
        cosine_from_parts(self.dot(i, j), self.dot(i, i), self.dot(j, j))
    }

    /// Full symmetric cosine matrix.
    pub fn cosine_matrix(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.cosine(i, j)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDistanceRow {
    pub layer_key: String,
    pub distance: f64,
    /// `distance / max distance` over the rows of one model pair; zero when
    /// every distance is zero.
    pub normalized: f64,
}

/// Numeric keys ascend by value, then all other keys byte-wise.
pub fn compare_layer_keys(a: &str, b: &str) -> Ordering {
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    match (numeric(a), numeric(b)) {
        (true, true) => {
            let ta = a.trim_start_matches('0');
            let tb = b.trim_start_matches('0');
            ta.len()
                .cmp(&tb.len())
                .then_with(|| ta.cmp(tb))
                .then_with(|| a.cmp(b))
        }
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (false, false) => a.cmp(b),
    }
}

/// Turns per-group squared distances into ordered, max-normalized rows.
pub fn layer_rows(groups: impl IntoIterator<Item = (String, f64)>) -> Vec<LayerDistanceRow> {
    let mut rows: Vec<LayerDistanceRow> = groups
        .into_iter()
        .map(|(layer_key, sq)| LayerDistanceRow {
            layer_key,
            distance: libm::sqrt(sq),
            normalized: 0.0,
        })
        .collect();
    rows.sort_by(|a, b| compare_layer_keys(&a.layer_key, &b.layer_key));
    let max = rows.iter().map(|r| r.distance).fold(0.0, f64::max);
    if max > 0.0 {
        for r in &mut rows {
            r.normalized = if r.distance == max { 1.0 } else { r.distance / max };
        }
    }
    rows
}
