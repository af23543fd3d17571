//! GPU-hour accounting for fine-tuning runs and the search-cost comparison
//! between data mixing and distribution edited models.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SECONDS_PER_HOUR: f64 = 3600.0;
const MAX_EXACT: u128 = 1 << 53;

/// One training or validation run: `steps` steps of `time_per_step` seconds
/// on `gpus` GPUs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCost {
    pub label: String,
    pub time_per_step: f64,
    pub steps: u64,
    pub gpus: u64,
}

impl RunCost {
    pub fn new(label: impl Into<String>, time_per_step: f64, steps: u64, gpus: u64) -> Self {
        RunCost {
            label: label.into(),
            time_per_step,
            steps,
            gpus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_per_step.is_finite() && self.time_per_step > 0.0) {
            return Err(Error::config(alloc::format!(
                "run '{}': time per step must be positive, got {}",
                self.label,
                self.time_per_step
            )));
        }
        if self.gpus == 0 {
            return Err(Error::config(alloc::format!(
                "run '{}': needs at least one gpu",
                self.label
            )));
        }
        Ok(())
    }
}

/// `steps * time_per_step * gpus / 3600`.
pub fn gpu_hours(run: &RunCost) -> Result<f64> {
    run.validate()?;
    Ok(run.steps as f64 * run.time_per_step * run.gpus as f64 / SECONDS_PER_HOUR)
}

/// Training runs plus `trials` repetitions of the validation run.
pub fn dem_total_cost(runs: &[RunCost], validation: &RunCost, trials: u64) -> Result<f64> {
    let training = runs.iter().map(gpu_hours).sum::<Result<f64>>()?;
    if trials == 0 {
        return Ok(training);
    }
    Ok(training + trials as f64 * gpu_hours(validation)?)
}

pub fn savings_ratio(mixing_total: f64, dem_total: f64) -> Result<f64> {
    if dem_total.is_nan() || dem_total <= 0.0 || dem_total.is_infinite() {
        return Err(Error::config(alloc::format!(
            "DEM total must be positive, got {dem_total}"
        )));
    }
    Ok(mixing_total / dem_total)
}

/// Search-space shape: `sources` data sources with `weights_per_source`
/// candidate weights each, and average training / validation step counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchCostParams {
    pub sources: u64,
    pub weights_per_source: u64,
    pub train_steps: u64,
    pub validation_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchComplexity {
    /// `m^n (T + V)`: every combination is trained and validated.
    pub mixing_cost: f64,
    /// `n (T + V) + m^n V`: train once per source, validate every combination.
    pub dem_cost: f64,
    /// `m^n / n` fewer training runs.
    pub run_reduction_factor: f64,
}

pub fn search_complexity(p: &SearchCostParams) -> Result<SearchComplexity> {
    if p.sources == 0 || p.weights_per_source == 0 || p.train_steps == 0 || p.validation_steps == 0
    {
        return Err(Error::config("search cost parameters must all be positive"));
    }
    let overflow = || Error::Overflow("search cost exceeds exact f64 range (2^53)".into());
    let exact = |v: Option<u128>| v.filter(|&x| x <= MAX_EXACT).ok_or_else(overflow);

    let n = p.sources as u128;
    let combos = exact(
        u32::try_from(p.sources)
            .ok()
            .and_then(|e| (p.weights_per_source as u128).checked_pow(e)),
    )?;
    let step = (p.train_steps as u128) + (p.validation_steps as u128);
    let mixing = exact(combos.checked_mul(step))?;
    let dem = exact(
        n.checked_mul(step)
            .and_then(|a| a.checked_add(combos.checked_mul(p.validation_steps as u128)?)),
    )?;
    Ok(SearchComplexity {
        mixing_cost: mixing as f64,
        dem_cost: dem as f64,
        run_reduction_factor: combos as f64 / n as f64,
    })
}

/// Candidate mixing weights for one data source.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingRange {
    pub label: String,
    pub values: Vec<f64>,
}

/// Per-source mixing-weight ranges used for the 7B data-mixing baseline
/// sweep (1024 combinations).
pub fn reference_mixing_ranges() -> Vec<MixingRange> {
    let r = |label: &str, values: [f64; 4]| MixingRange {
        label: label.into(),
        values: values.to_vec(),
    };
    alloc::vec![
        r("cot", [0.05, 0.10, 0.15, 0.20]),
        r("mathqa", [0.05, 0.10, 0.15, 0.20]),
        r("p3", [0.25, 0.30, 0.35, 0.40]),
        r("instdial", [0.30, 0.35, 0.40, 0.45]),
        r("sni", [0.15, 0.20, 0.25, 0.30]),
    ]
}

/// Size of the Cartesian product of `ranges`.
pub fn mixing_grid_size(ranges: &[MixingRange]) -> Result<u64> {
    ranges
        .iter()
        .try_fold(1u64, |acc, r| acc.checked_mul(r.values.len() as u64))
        .ok_or_else(|| Error::Overflow("mixing grid size exceeds u64".into()))
}

/// The `index`-th combination in row-major order (last range fastest).
pub fn mixing_combination(ranges: &[MixingRange], mut index: u64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; ranges.len()];
    for (slot, r) in out.iter_mut().zip(ranges).rev() {
        let len = r.values.len() as u64;
        *slot = r.values[(index % len) as usize];
        index /= len;
    }
    out
}

pub fn enumerate_mixing_grid(ranges: &[MixingRange]) -> Result<Vec<Vec<f64>>> {
    let total = mixing_grid_size(ranges)?;
    Ok((0..total).map(|i| mixing_combination(ranges, i)).collect())
}

/// `k` distinct combinations drawn without replacement, in draw order.
pub fn sample_mixing_combinations(
    ranges: &[MixingRange],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let total = mixing_grid_size(ranges)?;
    if k as u64 > total {
        return Err(Error::config(alloc::format!(
            "cannot draw {k} distinct combinations from {total}"
        )));
    }
    let total = usize::try_from(total)
        .map_err(|_| Error::Overflow("mixing grid too large to sample".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..k {
        let j = rng.random_range(i..total);
        indices.swap(i, j);
    }
    Ok(indices[..k]
        .iter()
        .map(|&i| mixing_combination(ranges, i as u64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gpu_hours_examples() {
        let h = gpu_hours(&RunCost::new("cot", 6.5, 550, 8)).unwrap();
        assert!((h - 7.944_444_444).abs() < 1e-6);
        assert_eq!(gpu_hours(&RunCost::new("p3", 4.8, 6000, 32)).unwrap(), 256.0);
        assert_eq!(gpu_hours(&RunCost::new("idle", 4.8, 0, 32)).unwrap(), 0.0);
    }

    #[test]
    fn invalid_runs_rejected() {
        assert!(gpu_hours(&RunCost::new("x", 0.0, 1, 1)).is_err());
        assert!(gpu_hours(&RunCost::new("x", 1.0, 1, 0)).is_err());
        assert!(gpu_hours(&RunCost::new("x", f64::NAN, 1, 1)).is_err());
    }

    #[test]
    fn dem_total_degenerate_cases() {
        let v = RunCost::new("val", 2.1, 500, 8);
        assert_eq!(dem_total_cost(&[], &v, 0).unwrap(), 0.0);
        let r = RunCost::new("p3", 4.8, 6000, 32);
        assert_eq!(dem_total_cost(&[r], &v, 0).unwrap(), 256.0);
    }

    #[test]
    fn complexity_hand_values() {
        let c = search_complexity(&SearchCostParams {
            sources: 2,
            weights_per_source: 2,
            train_steps: 100,
            validation_steps: 10,
        })
        .unwrap();
        assert_eq!((c.mixing_cost, c.dem_cost, c.run_reduction_factor), (440.0, 260.0, 2.0));

        let c = search_complexity(&SearchCostParams {
            sources: 1,
            weights_per_source: 1,
            train_steps: 100,
            validation_steps: 10,
        })
        .unwrap();
        // a single weight per source: nothing to search, DEM pays one extra validation
        assert_eq!((c.mixing_cost, c.dem_cost), (110.0, 120.0));
    }

    #[test]
    fn complexity_overflow_is_an_error() {
        let p = SearchCostParams {
            sources: 60,
            weights_per_source: 10,
            train_steps: 1,
            validation_steps: 1,
        };
        assert!(matches!(search_complexity(&p), Err(Error::Overflow(_))));
    }

    #[test]
    fn savings_ratio_guards_zero() {
        assert!(savings_ratio(1.0, 0.0).is_err());
        assert_eq!(savings_ratio(5.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn reference_grid_has_1024_distinct_points() {
        let ranges = reference_mixing_ranges();
        let all = enumerate_mixing_grid(&ranges).unwrap();
        assert_eq!(all.len(), 1024);
        assert_eq!(all[0], [0.05, 0.05, 0.25, 0.30, 0.15]);
        assert_eq!(all[1023], [0.20, 0.20, 0.40, 0.45, 0.30]);
        let mut sorted = all.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        assert_eq!(sorted.len(), 1024);
    }

    #[test]
    fn sampled_combinations_are_distinct() {
        let ranges = reference_mixing_ranges();
        let s = sample_mixing_combinations(&ranges, 50, 3).unwrap();
        assert_eq!(s.len(), 50);
        let mut d = s.clone();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d.dedup();
        assert_eq!(d.len(), 50);
        assert_eq!(s, sample_mixing_combinations(&ranges, 50, 3).unwrap());
        assert!(sample_mixing_combinations(&ranges, 1025, 3).is_err());
    }
}
