//! Bookkeeping for merge-weight search: candidate generation, evaluation
//! results and argmin selection. Evaluating a candidate is the caller's job.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arith::{MergeMode, WeightConfig, WeightEntry};
use crate::error::{Error, Result};

/// Seed used by random search when none is given.
pub const DEFAULT_SEED: u64 = 22;

/// Single-coefficient grid `0.05, 0.10, ..., 0.50`.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 20.0).collect()
}

/// Per-dataset validation losses and their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    losses: BTreeMap<String, f64>,
    objective: f64,
}

impl EvaluationResult {
    pub fn from_losses(losses: BTreeMap<String, f64>) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Evaluation("evaluator reported no losses".into()));
        }
        if let Some((label, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Evaluation(alloc::format!(
                "loss for '{label}' is not finite ({v})"
            )));
        }
        let objective = losses.values().sum::<f64>() / losses.len() as f64;
        Ok(EvaluationResult { losses, objective })
    }

    pub fn losses(&self) -> &BTreeMap<String, f64> {
        &self.losses
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Evaluated(EvaluationResult),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub weights: WeightConfig,
    pub outcome: TrialOutcome,
}

impl Trial {
    pub fn objective(&self) -> Option<f64> {
        match &self.outcome {
            TrialOutcome::Evaluated(r) => Some(r.objective()),
            TrialOutcome::Failed(_) => None,
        }
    }
}

/// Index of the successful trial with the lowest objective; the earliest
/// one wins ties.
pub fn argmin(trials: &[Trial]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(obj) = t.objective() {
            if best.is_none_or(|(_, b)| obj < b) {
                best = Some((i, obj));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    Grid,
    Random,
}

impl SearchStrategy {
    pub const fn as_str(self) -> &'static str {
        match self {
            SearchStrategy::Grid => "grid",
            SearchStrategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub strategy: SearchStrategy,
    pub trials: Vec<Trial>,
    pub best_index: usize,
    pub rng_seed: Option<u64>,
}

impl SearchReport {
    /// Fails with [`Error::SearchFailed`] when no trial succeeded.
    pub fn new(strategy: SearchStrategy, trials: Vec<Trial>, rng_seed: Option<u64>) -> Result<Self> {
        let best_index = argmin(&trials).ok_or(Error::SearchFailed(trials.len()))?;
        Ok(SearchReport {
            strategy,
            trials,
            best_index,
            rng_seed,
        })
    }

    pub fn best(&self) -> &Trial {
        &self.trials[self.best_index]
    }

    pub fn failed_count(&self) -> usize {
        self.trials.iter().filter(|t| t.objective().is_none()).count()
    }
}

/// One Dem config per grid value, every label sharing that value.
pub fn grid_configs<S: AsRef<str>>(labels: &[S], grid: &[f64]) -> Result<Vec<WeightConfig>> {
    if grid.is_empty() {
        return Err(Error::config("search grid is empty"));
    }
    grid.iter()
        .map(|&w| {
            if !w.is_finite() {
                return Err(Error::config(alloc::format!("grid value {w} is not finite")));
            }
            WeightConfig::uniform(MergeMode::Dem, labels.iter().map(|l| l.as_ref()), w)
        })
        .collect()
}

/// Seeded sampler of per-source weights drawn i.i.d. from `[0, 1)`. In
/// interpolation mode each draw is normalized to sum to one.
#[derive(Debug, Clone)]
pub struct WeightSampler {
    rng: ChaCha8Rng,
    mode: MergeMode,
}

impl WeightSampler {
    pub fn new(seed: u64, mode: MergeMode) -> Self {
        WeightSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            mode,
        }
    }

    pub fn sample<S: AsRef<str>>(&mut self, labels: &[S]) -> WeightConfig {
        let mut weights: Vec<f64> = labels.iter().map(|_| self.rng.random::<f64>()).collect();
        if self.mode == MergeMode::Interpolation {
            let mut sum: f64 = weights.iter().sum();
            while sum == 0.0 && !weights.is_empty() {
                weights = labels.iter().map(|_| self.rng.random::<f64>()).collect();
                sum = weights.iter().sum();
            }
            for w in &mut weights {
                *w /= sum;
            }
        }
        WeightConfig {
            mode: self.mode,
            entries: labels
                .iter()
                .zip(weights)
                .map(|(l, weight)| WeightEntry {
                    label: l.as_ref().into(),
                    weight,
                })
                .collect(),
        }
    }
}

/// `k` configs from a fresh sampler seeded with `seed`.
pub fn random_configs<S: AsRef<str>>(
    labels: &[S],
    k: usize,
    seed: u64,
    mode: MergeMode,
) -> Result<Vec<WeightConfig>> {
    if k == 0 {
        return Err(Error::config("random search needs at least one trial"));
    }
    let mut sampler = WeightSampler::new(seed, mode);
    Ok((0..k).map(|_| sampler.sample(labels)).collect())
}
