use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn rokhlin(out: &Path, args: &[&str]) -> (i32, Value) {
    let status = Command::new(env!("CARGO_BIN_EXE_rokhlin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    let code = status.status.code().expect("exit code");
    let report = std::fs::read_to_string(out.join("report.json")).map(|s| serde_json::from_str(&s).unwrap()).unwrap_or(Value::Null);
    (code, report)
}

fn claim<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["claims"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap_or_else(|| panic!("no claim {name}"))
}

#[test]
fn ktheory_identity_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = rokhlin(dir.path(), &["ktheory"]);
    assert_eq!(code, 0);
    assert_eq!(report["schema"], 1);
    assert_eq!(report["pass"], true);
    for c in report["claims"].as_array().unwrap() {
        assert!(c["op"].as_str().unwrap().contains("::"), "{c}");
    }
    assert!(dir.path().join("ktheory.csv").exists());
}

#[test]
fn match_reports_the_bottleneck_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = rokhlin(dir.path(), &["match", "--set", "map.theta=0.3", "--set", "matching.grid=5", "--set", "matching.eps=0.09"]);
    assert_eq!(code, 1);
    let b = claim(&report, "min bottleneck");
    assert!((b["value"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(b["pass"], false);
    let csv = std::fs::read_to_string(dir.path().join("matching.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn match_with_measure_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = rokhlin(dir.path(), &["match", "--set", "matching.sample_eps=0.1", "--set", "matching.eps=0.01"]);
    assert_eq!(code, 0, "{report}");
    assert_eq!(claim(&report, "measure comparison failures")["value"], 0);
}

#[test]
fn golden_tower_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = rokhlin(dir.path(), &["tower", "--set", "tower.height=5", "--set", "tower.delta=0.1"]);
    assert_eq!(code, 0, "{report}");
    assert!(claim(&report, "coverage")["value"].as_f64().unwrap() >= 0.9);
    assert_eq!(claim(&report, "levels disjoint (exact)")["pass"], true);
    assert!(dir.path().join("projections.csv").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rokhlin(dir.path(), &["tower", "--set", "tower.delta=1.5"]).0, 2);
    assert_eq!(rokhlin(dir.path(), &["trace", "--set", "unknown.key=1"]).0, 2);
    assert_eq!(rokhlin(dir.path(), &["match", "--config", "/nonexistent/config.json"]).0, 2);
    assert_eq!(rokhlin(dir.path(), &["tower", "--set", "map.theta=0.25"]).0, 2);
    assert_eq!(rokhlin(dir.path(), &["frobnicate"]).0, 2);
}

#[test]
fn config_file_and_override_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"map": {"kind": "rotation", "theta": 0.2, "dim": 1}, "matching": {"grid": 5, "eps": 0.5}}"#).unwrap();
    let out = dir.path().join("o");
    let (code, report) = rokhlin(&out, &["match", "--config", cfg.to_str().unwrap(), "--set", "matching.eps=0.001"]);
    assert_eq!(code, 0);
    assert!(claim(&report, "min bottleneck")["value"].as_f64().unwrap() < 1e-12);
}

#[test]
fn intertwine_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let (code, report) = rokhlin(&first, &["intertwine", "--seed", "11"]);
    assert_eq!(code, 0, "{report}");
    assert_eq!(report["seed"], 11);
    let second = dir.path().join("b");
    let (code, report) = rokhlin(&second, &["replay", first.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code, 0, "{report}");
    assert_eq!(claim(&report, "manifest byte-identical")["pass"], true);
    let third = dir.path().join("c");
    rokhlin(&third, &["intertwine", "--seed", "11", "--jobs", "1"]);
    assert_eq!(std::fs::read(first.join("manifest.json")).unwrap(), std::fs::read(third.join("manifest.json")).unwrap());
    assert_eq!(std::fs::read(first.join("stages.csv")).unwrap(), std::fs::read(third.join("stages.csv")).unwrap());
}

#[test]
fn tampered_manifest_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    rokhlin(&first, &["intertwine", "--set", "stages.a=[1,1]", "--set", "stages.eps=[0.5,0.25]"]);
    let path = first.join("manifest.json");
    let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    m["run"]["telescoped"] = Value::from(123.0);
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap() + "\n").unwrap();
    let (code, report) = rokhlin(&dir.path().join("b"), &["replay", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert_eq!(claim(&report, "manifest byte-identical")["pass"], false);
}

#[test]
fn trace_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (code, a) = rokhlin(&dir.path().join("a"), &["trace"]);
    assert_eq!(code, 0, "{a}");
    let (_, b) = rokhlin(&dir.path().join("b"), &["trace"]);
    assert_eq!(a, b);
}

#[test]
fn unattainable_stage_threshold_fails_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = rokhlin(dir.path(), &["intertwine", "--set", "stages.a=[1]", "--set", "stages.eps=[1e-9]"]);
    assert_eq!(code, 1);
    assert!(report["error"].as_str().unwrap().contains("matching"), "{report}");
}
