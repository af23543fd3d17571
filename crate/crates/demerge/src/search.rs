//! Merge-weight search against an external evaluator.
//!
//! Each trial composes a candidate DEM into a work directory, hands its path
//! to the evaluator, and records the per-dataset losses. Trials may run in
//! parallel; the report always lists them in submission order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use demerge_core::search::{
    grid_configs, random_configs, EvaluationResult, SearchReport, SearchStrategy, Trial,
    TrialOutcome,
};
use demerge_core::{MergeMode, WeightConfig};
use serde_json::{json, Value};

use crate::checkpoint::TensorSource;
use crate::error::{Error, Result};
use crate::format::CheckpointWriter;
use crate::merge::compose_dem_into;

/// Scores one candidate checkpoint.
pub trait Evaluator: Sync {
    fn evaluate(&self, candidate: &Path) -> Result<EvaluationResult>;
}

impl<F> Evaluator for F
where
    F: Fn(&Path) -> Result<EvaluationResult> + Sync,
{
    fn evaluate(&self, candidate: &Path) -> Result<EvaluationResult> {
        self(candidate)
    }
}

/// Runs `argv... <candidate>` and reads `{"losses": {label: number}}` from
/// its stdout.
#[derive(Debug, Clone)]
pub struct CommandEvaluator {
    argv: Vec<String>,
}

impl CommandEvaluator {
    pub fn new(argv: Vec<String>) -> Result<Self> {
        if argv.is_empty() {
            return Err(Error::config("evaluator command is empty"));
        }
        Ok(CommandEvaluator { argv })
    }

    /// Splits a shell-style command line.
    pub fn parse(command: &str) -> Result<Self> {
        let argv = shell_words::split(command)
            .map_err(|e| Error::config(format!("cannot parse evaluator command: {e}")))?;
        Self::new(argv)
    }
}

impl Evaluator for CommandEvaluator {
    fn evaluate(&self, candidate: &Path) -> Result<EvaluationResult> {
        let output = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(candidate)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| Error::Evaluator(format!("cannot run '{}': {e}", self.argv[0])))?;
        let stderr = String::from_utf8_lossy(&output.stderr);
        let stderr = stderr.trim();
        if !output.status.success() {
            return Err(Error::Evaluator(format!(
                "evaluator exited with {}; stderr: {stderr}",
                output.status
            )));
        }
        parse_losses(&output.stdout).map_err(|e| match e {
            Error::Evaluator(msg) if !stderr.is_empty() => {
                Error::Evaluator(format!("{msg}; stderr: {stderr}"))
            }
            other => other,
        })
    }
}

/// Parses the evaluator's stdout protocol.
pub fn parse_losses(stdout: &[u8]) -> Result<EvaluationResult> {
    let value: Value = serde_json::from_slice(stdout)
        .map_err(|e| Error::Evaluator(format!("evaluator output is not JSON: {e}")))?;
    let losses = value
        .get("losses")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Evaluator("evaluator output lacks a \"losses\" object".into()))?;
    let losses = losses
        .iter()
        .map(|(k, v)| {
            v.as_f64()
                .map(|x| (k.clone(), x))
                .ok_or_else(|| Error::Evaluator(format!("loss for '{k}' is not a number")))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    EvaluationResult::from_losses(losses).map_err(|e| Error::Evaluator(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Concurrent trials.
    pub jobs: usize,
    /// Keep candidate checkpoints after evaluation.
    pub keep: bool,
    /// Where candidates are written; a fresh temporary directory otherwise.
    pub work_dir: Option<PathBuf>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            jobs: 1,
            keep: false,
            work_dir: None,
        }
    }
}

type Dvs<'a> = [(&'a str, &'a (dyn TensorSource + Sync))];

/// One candidate per grid value, every distribution vector sharing the
/// coefficient.
pub fn grid_search(
    base: &(dyn TensorSource + Sync),
    dvs: &Dvs<'_>,
    grid: &[f64],
    evaluator: &dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchReport> {
    let labels: Vec<&str> = dvs.iter().map(|(l, _)| *l).collect();
    let configs = grid_configs(&labels, grid)?;
    let trials = run_trials(base, dvs, configs, evaluator, options)?;
    Ok(SearchReport::new(SearchStrategy::Grid, trials, None)?)
}

/// `k` candidates with per-vector weights drawn from `[0, 1)`; normalized to
/// sum to one in interpolation mode.
pub fn random_search(
    base: &(dyn TensorSource + Sync),
    dvs: &Dvs<'_>,
    k: usize,
    seed: u64,
    mode: MergeMode,
    evaluator: &dyn Evaluator,
    options: &SearchOptions,
) -> Result<SearchReport> {
    let labels: Vec<&str> = dvs.iter().map(|(l, _)| *l).collect();
    let configs = random_configs(&labels, k, seed, mode)?;
    let trials = run_trials(base, dvs, configs, evaluator, options)?;
    Ok(SearchReport::new(SearchStrategy::Random, trials, Some(seed))?)
}

enum WorkDir {
    Temp(tempfile::TempDir),
    Given(PathBuf),
}

impl WorkDir {
    fn path(&self) -> &Path {
        match self {
            WorkDir::Temp(t) => t.path(),
            WorkDir::Given(p) => p,
        }
    }
}

/// Evaluates every config exactly once. Compose or evaluator failures are
/// recorded on the trial, never retried.
pub fn run_trials(
    base: &(dyn TensorSource + Sync),
    dvs: &Dvs<'_>,
    configs: Vec<WeightConfig>,
    evaluator: &dyn Evaluator,
    options: &SearchOptions,
) -> Result<Vec<Trial>> {
    // structural problems fail the whole search up front
    for (_, dv) in dvs {
        crate::checkpoint::check_compatibility(base, *dv)?;
    }
    let work = match &options.work_dir {
        Some(p) => {
            std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
            WorkDir::Given(p.clone())
        }
        None => WorkDir::Temp(
            tempfile::Builder::new()
                .prefix("demerge-search-")
                .tempdir()
                .map_err(|e| Error::io("creating work directory", e))?,
        ),
    };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TrialOutcome>>> = Mutex::new(vec![None; configs.len()]);
    let jobs = options.jobs.clamp(1, configs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let path = work.path().join(format!("trial-{i:04}.demckpt"));
                let outcome = run_one(base, dvs, config, evaluator, &path);
                if !options.keep {
                    let _ = std::fs::remove_file(&path);
                }
                match &outcome {
                    TrialOutcome::Evaluated(r) => {
                        log::info!("trial {i}: objective {}", r.objective())
                    }
                    TrialOutcome::Failed(e) => log::warn!("trial {i} failed: {e}"),
                }
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    if options.keep {
        let kept = match work {
            WorkDir::Temp(t) => t.keep(),
            WorkDir::Given(p) => p,
        };
        log::info!("candidates kept in {}", kept.display());
    }
    let outcomes = slots.into_inner().unwrap();
    Ok(configs
        .into_iter()
        .zip(outcomes)
        .map(|(weights, outcome)| Trial {
            weights,
            outcome: outcome.expect("every trial ran"),
        })
        .collect())
}

fn run_one(
    base: &dyn TensorSource,
    dvs: &Dvs<'_>,
    config: &WeightConfig,
    evaluator: &dyn Evaluator,
    path: &Path,
) -> TrialOutcome {
    let dvs: Vec<(&str, &dyn TensorSource)> = dvs
        .iter()
        .map(|&(l, d)| (l, d as &dyn TensorSource))
        .collect();
    let composed = CheckpointWriter::create(path, base.kind()).and_then(|mut w| {
        compose_dem_into(base, &dvs, config, &mut w)?;
        w.finish()
    });
    let result = composed.and_then(|()| evaluator.evaluate(path));
    match result {
        Ok(r) => TrialOutcome::Evaluated(r),
        Err(e) => TrialOutcome::Failed(format!("{}: {e}", e.kind())),
    }
}

pub fn report_to_json(report: &SearchReport) -> Value {
    let trials: Vec<Value> = report
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut v = json!({
                "index": i,
                "weights": crate::weights::to_json(&t.weights),
            });
            match &t.outcome {
                TrialOutcome::Evaluated(r) => {
                    v["status"] = "ok".into();
                    v["losses"] = json!(r.losses());
                    v["objective"] = r.objective().into();
                }
                TrialOutcome::Failed(e) => {
                    v["status"] = "failed".into();
                    v["error"] = e.as_str().into();
                }
            }
            v
        })
        .collect();
    json!({
        "strategy": report.strategy.as_str(),
        "rng_seed": report.rng_seed,
        "best_index": report.best_index,
        "best": crate::weights::to_json(&report.best().weights),
        "best_objective": report.best().objective(),
        "failed_trials": report.failed_count(),
        "trials": trials,
    })
}
