//! Cost scenarios: JSON input mirroring a per-run cost table, and the
//! summary printed by `demerge cost`.

use std::fmt::Write as _;
use std::path::Path;

use demerge_core::cost::{
    dem_total_cost, gpu_hours, savings_ratio, search_complexity, RunCost, SearchComplexity,
    SearchCostParams,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRow {
    pub label: String,
    pub time_per_step: f64,
    pub steps: u64,
    pub gpus: u64,
}

impl From<&RunRow> for RunCost {
    fn from(r: &RunRow) -> Self {
        RunCost::new(r.label.clone(), r.time_per_step, r.steps, r.gpus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataMixing {
    /// Representative run of the mixing baseline.
    pub run: RunRow,
    /// Number of mixing runs in the sweep.
    pub runs: u64,
    /// Average cost per sweep run when it differs from `run`'s cost (early
    /// stopping).
    #[serde(default)]
    pub average_run_gpu_hours: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub training_runs: Vec<RunRow>,
    pub validation: RunRow,
    pub validation_trials: u64,
    pub data_mixing: Option<DataMixing>,
    #[serde(default)]
    pub search: Option<SearchParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    pub sources: u64,
    pub weights_per_source: u64,
    pub train_steps: u64,
    pub validation_steps: u64,
}

impl From<SearchParams> for SearchCostParams {
    fn from(p: SearchParams) -> Self {
        SearchCostParams {
            sources: p.sources,
            weights_per_source: p.weights_per_source,
            train_steps: p.train_steps,
            validation_steps: p.validation_steps,
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("invalid cost scenario {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<(String, f64)>,
    pub validation_per_trial: f64,
    pub validation_trials: u64,
    pub dem_total: f64,
    /// Mixing sweep from the average per-run cost when given, else from the
    /// representative run.
    pub mixing_total: Option<f64>,
    /// Mixing sweep priced at the representative run's cost; reported
    /// alongside, never reconciled with `mixing_total`.
    pub mixing_total_from_run: Option<f64>,
    pub mixing_run_hours: Option<f64>,
    pub savings_ratio: Option<f64>,
    pub complexity: Option<(SearchParams, SearchComplexity)>,
}

pub fn evaluate(s: &Scenario) -> Result<CostReport> {
    let runs: Vec<RunCost> = s.training_runs.iter().map(RunCost::from).collect();
    let rows = runs
        .iter()
        .map(|r| Ok((r.label.clone(), gpu_hours(r)?)))
        .collect::<Result<Vec<_>>>()?;
    let validation = RunCost::from(&s.validation);
    let validation_per_trial = gpu_hours(&validation)?;
    let dem_total = dem_total_cost(&runs, &validation, s.validation_trials)?;

    let (mut mixing_total, mut mixing_total_from_run, mut mixing_run_hours) = (None, None, None);
    if let Some(m) = &s.data_mixing {
        let per_run = gpu_hours(&RunCost::from(&m.run))?;
        mixing_run_hours = Some(per_run);
        mixing_total_from_run = Some(per_run * m.runs as f64);
        mixing_total = Some(match m.average_run_gpu_hours {
            Some(avg) if avg.is_finite() && avg >= 0.0 => avg * m.runs as f64,
            Some(avg) => {
                return Err(Error::config(format!("invalid average run cost {avg}")))
            }
            None => per_run * m.runs as f64,
        });
    }
    let savings_ratio = mixing_total
        .map(|m| savings_ratio(m, dem_total))
        .transpose()?;
    let complexity = s
        .search
        .map(|p| Ok::<_, Error>((p, search_complexity(&p.into())?)))
        .transpose()?;
    Ok(CostReport {
        rows,
        validation_per_trial,
        validation_trials: s.validation_trials,
        dem_total,
        mixing_total,
        mixing_total_from_run,
        mixing_run_hours,
        savings_ratio,
        complexity,
    })
}

impl CostReport {
    /// Plain-text table: one line per run, the validation block, totals.
    pub fn render(&self, s: &Scenario) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>8} {:>6} {:>10}",
            "run", "time/step", "steps", "gpus", "gpu-hours"
        );
        for (row, (_, hours)) in s.training_runs.iter().zip(&self.rows) {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>8} {:>6} {:>10.2}",
                row.label, row.time_per_step, row.steps, row.gpus, hours
            );
        }
        let v = &s.validation;
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>8} {:>6} {:>10.2}",
            format!("{} ({}x)", v.label, self.validation_trials),
            v.time_per_step,
            v.steps,
            v.gpus,
            self.validation_per_trial * self.validation_trials as f64
        );
        let _ = writeln!(out, "{:<24} {:>10} {:>8} {:>6} {:>10.2}", "DEM total", "", "", "", self.dem_total);
        if let (Some(m), Some(total)) = (&s.data_mixing, self.mixing_total) {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>8} {:>6} {:>10.2}",
                format!("{} ({}x)", m.run.label, m.runs),
                m.run.time_per_step,
                m.run.steps,
                m.run.gpus,
                total
            );
            if let (Some(from_run), Some(per_run)) = (self.mixing_total_from_run, self.mixing_run_hours) {
                if m.average_run_gpu_hours.is_some() {
                    let _ = writeln!(
                        out,
                        "  note: listed run costs {per_run:.2} gpu-hours ({from_run:.2} over {} runs); total uses the average",
                        m.runs
                    );
                }
            }
        }
        if let Some(r) = self.savings_ratio {
            let _ = writeln!(out, "savings ratio (mixing / DEM): {r:.2}x");
        }
        if let Some((p, c)) = &self.complexity {
            let _ = writeln!(
                out,
                "search cost n={} m={} T={} V={}: mixing {} steps, DEM {} steps, {}x fewer training runs",
                p.sources, p.weights_per_source, p.train_steps, p.validation_steps,
                c.mixing_cost, c.dem_cost, c.run_reduction_factor
            );
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "runs": self.rows.iter().map(|(l, h)| json!({"label": l, "gpu_hours": h})).collect::<Vec<_>>(),
            "validation": {"per_trial": self.validation_per_trial, "trials": self.validation_trials},
            "dem_total": self.dem_total,
            "mixing_total": self.mixing_total,
            "mixing_total_from_run": self.mixing_total_from_run,
            "savings_ratio": self.savings_ratio,
            "search_complexity": self.complexity.map(|(p, c)| json!({
                "params": p,
                "mixing_cost": c.mixing_cost,
                "dem_cost": c.dem_cost,
                "run_reduction_factor": c.run_reduction_factor,
            })),
        })
    }
}
