use std::path::Path;

use demerge::cost::{evaluate, load_scenario};
use demerge_core::cost::{
    dem_total_cost, enumerate_mixing_grid, gpu_hours, reference_mixing_ranges, search_complexity, RunCost,
    SearchCostParams,
};
use proptest::prelude::*;

fn reference_scenario() -> demerge::cost::Scenario {
    load_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.json")).unwrap()
}

#[test]
fn table_scenario_totals() {
    let r = evaluate(&reference_scenario()).unwrap();
    assert!((r.dem_total - 967.2333333).abs() < 1e-6, "{}", r.dem_total);
    assert_eq!(r.mixing_total, Some(11650.0));
    assert!((r.savings_ratio.unwrap() - 11650.0 / r.dem_total).abs() < 1e-12);
    let from_run = r.mixing_total_from_run.unwrap();
    assert!((from_run - 50.0 * 5.24 * 15000.0 * 16.0 / 3600.0).abs() < 1e-9);
}

#[test]
fn reference_grid_has_1024_points() {
    let g = enumerate_mixing_grid(&reference_mixing_ranges()).unwrap();
    assert_eq!(g.len(), 1024);
    let mut sorted = g.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    assert_eq!(sorted.len(), 1024);
}

#[test]
fn invalid_runs_are_rejected() {
    assert!(gpu_hours(&RunCost::new("x", 0.0, 10, 1)).is_err());
    assert!(gpu_hours(&RunCost::new("x", 1.0, 10, 0)).is_err());
    assert!(gpu_hours(&RunCost::new("x", f64::NAN, 10, 1)).is_err());
    assert_eq!(gpu_hours(&RunCost::new("x", 1.0, 0, 1)).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn gpu_hours_is_linear(t in 0.01f64..100.0, k in 0u64..100_000, g in 1u64..64, c in 1u64..8) {
        let one = gpu_hours(&RunCost::new("a", t, k, g)).unwrap();
        let more = gpu_hours(&RunCost::new("a", t, k * c, g)).unwrap();
        prop_assert!((more - c as f64 * one).abs() <= 1e-9 * (1.0 + more));
        let wide = gpu_hours(&RunCost::new("a", t, k, g * c)).unwrap();
        prop_assert!((wide - c as f64 * one).abs() <= 1e-9 * (1.0 + wide));
    }

    #[test]
    fn total_ignores_run_order(rows in prop::collection::vec((0.1f64..10.0, 1u64..10_000, 1u64..32), 1..8), trials in 0u64..20) {
        let runs: Vec<RunCost> = rows.iter().map(|&(t, k, g)| RunCost::new("r", t, k, g)).collect();
        let mut rev = runs.clone();
        rev.reverse();
        let v = RunCost::new("v", 2.0, 100, 2);
        let a = dem_total_cost(&runs, &v, trials).unwrap();
        let b = dem_total_cost(&rev, &v, trials).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn search_complexity_identities(n in 1u64..=6, m in 2u64..=10, v in 1u64..=10_000, extra in 0u64..=9_999) {
        let t = (v + extra).min(10_000);
        let c = search_complexity(&SearchCostParams { sources: n, weights_per_source: m, train_steps: t, validation_steps: v }).unwrap();
        let mn = (m as f64).powi(n as i32);
        prop_assert_eq!(c.mixing_cost, mn * (t + v) as f64);
        prop_assert_eq!(c.dem_cost, n as f64 * (t + v) as f64 + mn * v as f64);
        prop_assert_eq!(c.run_reduction_factor, mn / n as f64);
        prop_assert!(c.dem_cost <= c.mixing_cost);
    }
}

#[test]
fn search_complexity_overflow_is_an_error() {
    let p = SearchCostParams { sources: 40, weights_per_source: 10, train_steps: 1, validation_steps: 1 };
    assert!(matches!(search_complexity(&p), Err(demerge_core::Error::Overflow(_))));
}
