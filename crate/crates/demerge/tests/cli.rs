mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use demerge::format::save;
use demerge::{Checkpoint, CheckpointKind, DType, Tensor, TensorSource};

fn demerge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demerge")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn write(dir: &Path, name: &str, ckpt: &Checkpoint) -> String {
    let p = path(dir, name);
    save(ckpt, PathBuf::from(&p)).unwrap();
    p
}

#[test]
fn diff_then_merge_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(11);
    let s = random_structure(&mut r, DType::F32, 6, 5000);
    let base = fill(&mut r, CheckpointKind::Model, DType::F32, &s, -1.0, 1.0);
    let tuned = fill(&mut r, CheckpointKind::Model, DType::F32, &s, -1.0, 1.0);
    let b = write(dir.path(), "base.demckpt", &base);
    let t = write(dir.path(), "tuned.demckpt", &tuned);
    let dv = path(dir.path(), "x.delta");
    let o = demerge(&["diff", &b, &t, "-o", &dv]);
    assert!(o.status.success(), "{}", stderr(&o));

    let zero = path(dir.path(), "zero.demckpt");
    let o = demerge(&["merge", &b, "--dv", &format!("x={dv}"), "--weights", r#"{"mode":"dem","weights":{"x":0}}"#, "-o", &zero]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&zero).unwrap(), std::fs::read(&b).unwrap());

    let one = path(dir.path(), "one.demckpt");
    let o = demerge(&["merge", &b, "--dv", &format!("x={dv}"), "--weights", r#"{"mode":"dem","weights":{"x":1}}"#, "-o", &one]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = flat(&demerge::open(&one).unwrap());
    assert!(max_abs_diff(&got, &flat(&tuned)) <= 1e-6);
}

#[test]
fn interp_and_analyze_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = |v: [f64; 2]| Checkpoint::from_tensors(CheckpointKind::Model, [Tensor::f64("layers.0.w", [2], &v)]).unwrap();
    let a = write(dir.path(), "a.demckpt", &m([0.0, 0.0]));
    let b = write(dir.path(), "b.demckpt", &m([2.0, 4.0]));
    let out = path(dir.path(), "mid.demckpt");
    let o = demerge(&["interp", "--model", &format!("a={a}"), "--model", &format!("b={b}"), "--weights", r#"{"mode":"interpolation","weights":{"a":0.5,"b":0.5}}"#, "-o", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(demerge::open(&out).unwrap().values("layers.0.w").unwrap(), [1.0, 2.0]);

    let bad = demerge(&["interp", "--model", &format!("a={a}"), "--model", &format!("b={b}"), "--weights", r#"{"mode":"interpolation","weights":{"a":0.5,"b":0.6}}"#, "-o", &out]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).starts_with("ERROR ConfigError:"));

    let report = path(dir.path(), "report.json");
    let o = demerge(&["analyze", &a, "--model", &format!("b={b}"), "-o", &report]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let d = json["distance_from_base"][0]["distance"].as_f64().unwrap();
    assert!((d - 20f64.sqrt()).abs() < 1e-12);
    assert!(dir.path().join("report.distance_from_base.csv").exists());
}

#[test]
fn grid_search_with_an_external_evaluator() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let (base, dvs) = one_hot_setup(2);
    let b = write(dir.path(), "base.demckpt", &base);
    let d0 = write(dir.path(), "a.delta", &dvs[0]);
    let d1 = write(dir.path(), "b.delta", &dvs[1]);
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/quadratic_eval.py");
    let evaluator = format!("python3 '{}' a,b", script.display());
    let report = path(dir.path(), "search.json");
    let o = demerge(&["search", "grid", &b, "--dv", &format!("a={d0}"), "--dv", &format!("b={d1}"), "--evaluator", &evaluator, "--jobs", "2", "-o", &report]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("best coefficient: 0.25"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["trials"].as_array().unwrap().len(), 10);
    assert_eq!(json["best"]["weights"]["a"], 0.25);

    // the report feeds straight back into merge
    let merged = path(dir.path(), "best.demckpt");
    let o = demerge(&["merge", &b, "--dv", &format!("a={d0}"), "--dv", &format!("b={d1}"), "--weights", &report, "-o", &merged]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(demerge::open(&merged).unwrap().values("w").unwrap(), [0.25, 0.25]);

    let failing = demerge(&["search", "grid", &b, "--dv", &format!("a={d0}"), "--evaluator", "false", "-o", &report]);
    assert_eq!(failing.status.code(), Some(4));
    let err = stderr(&failing);
    assert!(err.lines().last().unwrap().starts_with("ERROR SearchFailed:"), "{err}");
}

#[test]
fn cost_prints_the_table() {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.json");
    let o = demerge(&["cost", "--scenario", scenario.to_str().unwrap(), "--complexity", "5,10,10000,1000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("967.2"), "{text}");
    assert!(text.contains("11650"), "{text}");
    assert!(text.contains("savings ratio (mixing / DEM): 12.04x"), "{text}");
    assert!(text.contains("20000"), "{text}");

    let o = demerge(&["cost", "--scenario", scenario.to_str().unwrap(), "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(json.is_object());
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let o = demerge(&["merge"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR UsageError:"));

    let junk = path(dir.path(), "junk.demckpt");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let o = demerge(&["diff", &junk, &junk, "-o", &path(dir.path(), "x")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("ERROR FormatError:"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = demerge(&["diff", &path(dir.path(), "missing"), &junk, "-o", &path(dir.path(), "x")]);
    assert_eq!(o.status.code(), Some(3));

    let a = write(dir.path(), "a.demckpt", &Checkpoint::from_tensors(CheckpointKind::Model, [Tensor::f32("t", [2], &[0.0; 2])]).unwrap());
    let b = write(dir.path(), "b.demckpt", &Checkpoint::from_tensors(CheckpointKind::Model, [Tensor::f32("t", [3], &[0.0; 3])]).unwrap());
    let o = demerge(&["diff", &a, &b, "-o", &path(dir.path(), "x")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("ERROR CompatibilityError:"));
    assert!(stderr(&o).contains('t'));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn version_names_the_format() {
    let o = demerge(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("DEMCKPT format version 1"));
}
