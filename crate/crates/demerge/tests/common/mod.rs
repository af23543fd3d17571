#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use demerge::search::Evaluator;
use demerge::{Checkpoint, CheckpointKind, DType, Tensor, TensorMeta, TensorSource};
use demerge_core::search::EvaluationResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random structure: 3..=max_tensors tensors, total elements <= max_elems.
pub fn random_structure(rng: &mut ChaCha8Rng, dtype: DType, max_tensors: usize, max_elems: u64) -> Vec<(String, Vec<u64>)> {
    let n = rng.random_range(3..=max_tensors);
    let budget = max_elems / n as u64;
    (0..n)
        .map(|i| {
            let name = if rng.random_bool(0.8) {
                format!("layers.{}.w{}", rng.random_range(0..6), i)
            } else {
                format!("embed.{i}")
            };
            let rank = rng.random_range(0..=3);
            let mut shape = Vec::new();
            let mut left = budget.max(1);
            for _ in 0..rank {
                let d = rng.random_range(1..=left.clamp(1, 64));
                shape.push(d);
                left = (left / d).max(1);
            }
            let _ = dtype;
            (name, shape)
        })
        .collect()
}

pub fn fill(rng: &mut ChaCha8Rng, kind: CheckpointKind, dtype: DType, structure: &[(String, Vec<u64>)], lo: f64, hi: f64) -> Checkpoint {
    let tensors = structure.iter().map(|(name, shape)| {
        let n: u64 = shape.iter().product();
        match dtype {
            DType::F32 => {
                let v: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi) as f32).collect();
                Tensor::f32(name.clone(), shape.clone(), &v)
            }
            DType::F64 => {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
                Tensor::f64(name.clone(), shape.clone(), &v)
            }
        }
    });
    Checkpoint::from_tensors(kind, tensors).unwrap()
}

pub fn structure_of(metas: &[TensorMeta]) -> Vec<(String, Vec<u64>)> {
    metas.iter().map(|m| (m.name.clone(), m.shape.clone())).collect()
}

/// All values of a source flattened in canonical order.
pub fn flat(src: &dyn TensorSource) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, m) in src.metas().iter().enumerate() {
        out.extend(m.dtype.values(&src.read_tensor(i).unwrap()));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn scaled(src: &Checkpoint, c: f64) -> Checkpoint {
    let tensors = src.metas().iter().enumerate().map(|(i, m)| {
        let v: Vec<f64> = m.dtype.values(&src.read_tensor(i).unwrap()).map(|x| x * c).collect();
        Tensor::f64(m.name.clone(), m.shape.clone(), &v)
    });
    Checkpoint::from_tensors(src.kind(), tensors).unwrap()
}

/// Evaluator reading the first tensor named `w` of the candidate: per label
/// `i` the loss is `(w[i] - target[i])^2`.
pub struct PlantedEvaluator {
    pub labels: Vec<String>,
    pub target: Vec<f64>,
    pub calls: AtomicUsize,
}

impl PlantedEvaluator {
    pub fn new(labels: &[&str], target: &[f64]) -> Self {
        PlantedEvaluator {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            target: target.to_vec(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Evaluator for PlantedEvaluator {
    fn evaluate(&self, candidate: &Path) -> demerge::Result<EvaluationResult> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let r = demerge::open(candidate)?;
        let w = r.values("w")?;
        let losses: BTreeMap<String, f64> = self
            .labels
            .iter()
            .zip(&self.target)
            .enumerate()
            .map(|(i, (l, t))| (l.clone(), (w[i] - t) * (w[i] - t)))
            .collect();
        Ok(EvaluationResult::from_losses(losses)?)
    }
}

/// Base of zeros and one-hot distribution vectors over a single tensor `w`
/// of length `n`, so a DEM candidate's `w` equals its weight vector.
pub fn one_hot_setup(n: usize) -> (Checkpoint, Vec<Checkpoint>) {
    let base = Checkpoint::from_tensors(CheckpointKind::Model, [Tensor::f64("w", [n as u64], &vec![0.0; n])]).unwrap();
    let dvs = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            Checkpoint::from_tensors(CheckpointKind::Delta, [Tensor::f64("w", [n as u64], &v)]).unwrap()
        })
        .collect();
    (base, dvs)
}
