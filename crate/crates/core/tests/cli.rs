use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn polarlab(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_polarlab")).args(args).output().unwrap();
    out.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("job.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const ANALYZE: &str = r#"{"surface": {"name": "clifford_torus"}, "grid": {"nu": 32, "nv": 32},
    "pipeline": [{"step": "analyze"}, {"step": "polar"}]}"#;

#[test]
fn clean_run_exits_zero_and_reports_willmore() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ANALYZE);
    let out = tmp.path().join("out");
    assert_eq!(polarlab(&["run", &cfg, "--out", out.to_str().unwrap()]), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report_analyze.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], "1.0.0");
    assert_eq!(report["pass"], true);
    let w = report["values"]["willmore"].as_f64().unwrap();
    assert!((w - 2.0 * PI * PI).abs() < 1e-6, "{w}");
    assert!(out.join("report_polar.json").exists());
    assert!(out.join("report_summary.json").exists());
    assert!(out.join("grid_kappa.csv").exists());
}

#[test]
fn failed_check_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"surface": {"name": "clifford_torus"}, "grid": {"nu": 16, "nv": 16},
            "tolerances": {"check_tol": 1e-300}, "pipeline": [{"step": "analyze"}]}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(polarlab(&["run", &cfg, "--out", out.to_str().unwrap()]), 1);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let bad = [
        r#"{"surface": {"name": "klein_bottle"}, "pipeline": [{"step": "analyze"}]}"#,
        r#"{"surface": {"name": "clifford_torus"}, "pipeline": [{"step": "darboux", "theta": 0}]}"#,
        r#"{"surface": {"name": "clifford_torus"}, "pipeline": []}"#,
        r#"{"surface": {"name": "clifford_torus"}, "pipeline": [{"step": "analyze"}], "colour": 3}"#,
        "not json",
    ];
    for text in bad {
        let cfg = write_config(tmp.path(), text);
        assert_eq!(polarlab(&["run", &cfg, "--out", out]), 2, "{text}");
    }
    let cfg = write_config(tmp.path(), ANALYZE);
    assert_eq!(polarlab(&["run", &cfg, "--grid", "32by32", "--out", out]), 2);
    assert_eq!(polarlab(&["run", "/nonexistent/job.json", "--out", out]), 2);
    assert_eq!(polarlab(&["frobnicate"]), 2);
    assert_eq!(polarlab(&["catalog"]), 0);
}

#[test]
fn reports_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), ANALYZE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(polarlab(&["run", &cfg, "--out", a.to_str().unwrap(), "--grid", "24x24"]), 0);
    assert_eq!(polarlab(&["run", &cfg, "--out", b.to_str().unwrap(), "--grid", "24x24"]), 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}
