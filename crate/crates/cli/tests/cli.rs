use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pv-elliptic"))
}

fn default_config() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let st = bin()
        .arg(cmd)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    st.status.code().unwrap()
}

fn short(mut v: Value, t_end: f64) -> Value {
    v["t_end"] = json!(t_end);
    v
}

#[test]
fn unknown_key_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let mut v = default_config();
    v["tolerances"]["colour"] = json!("red");
    let cfg = write_config(d.path(), &v);
    assert_eq!(run("orbit", &cfg, &d.path().join("o"), &[]), 3);
}

#[test]
fn missing_or_malformed_config_exits_3() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run("boutroux", &d.path().join("nope.json"), d.path(), &[]), 3);
    let p = d.path().join("bad.json");
    std::fs::write(&p, "{ not json").unwrap();
    assert_eq!(run("boutroux", &p, d.path(), &[]), 3);
    let cfg = write_config(d.path(), &default_config());
    assert_eq!(run("boutroux", &cfg, d.path(), &["--phi", "3.0"]), 3);
}

#[test]
fn boutroux_grid() {
    let d = tempfile::tempdir().unwrap();
    let mut v = default_config();
    v["boutroux"] = json!({ "phi_grid": [-1.2, -0.3, 0.3, 0.7, 1.2] });
    let cfg = write_config(d.path(), &v);
    let out = d.path().join("o");
    assert_eq!(run("boutroux", &cfg, &out, &[]), 0);
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let recs = rep["records"].as_array().unwrap();
    assert_eq!(recs.len(), 5);
    for r in recs {
        assert_eq!(r["pass"], json!(true));
        assert!(r["tau0"][1].as_f64().unwrap() > 0.0);
        assert!(r["bilinear_error"].as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn impossible_tolerance_fails_checks() {
    let d = tempfile::tempdir().unwrap();
    let mut v = default_config();
    v["tolerances"] = json!({ "bilinear": 1e-300 });
    let cfg = write_config(d.path(), &v);
    assert_eq!(run("boutroux", &cfg, &d.path().join("o"), &[]), 1);
}

#[test]
fn identities_pass() {
    let d = tempfile::tempdir().unwrap();
    let mut v = default_config();
    v["identities"] = json!({ "points": 20 });
    let cfg = write_config(d.path(), &v);
    let out = d.path().join("o");
    assert_eq!(run("identities", &cfg, &out, &[]), 0);
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(rep["checks"].as_array().unwrap().len() >= 10);
}

#[test]
fn zero_length_orbit_has_one_row() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &short(default_config(), 30.0));
    let out = d.path().join("o");
    assert_eq!(run("orbit", &cfg, &out, &[]), 0);
    let csv = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("re_t,im_t,re_x"));
}

#[test]
fn orbit_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &short(default_config(), 60.0));
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(run("orbit", &cfg, &a, &[]), 0);
    assert_eq!(run("orbit", &cfg, &b, &[]), 0);
    for f in ["table.csv", "report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn verify_default_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &default_config());
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(run("verify", &cfg, &a, &[]), 0);
    assert_eq!(run("verify", &cfg, &b, &[]), 0);
    for f in ["table.csv", "report.json", "plot.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("table.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 13);
    let plot = std::fs::read_to_string(a.join("plot.txt")).unwrap();
    assert!(plot.lines().all(|l| l.split_whitespace().count() == 2));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], json!(true));
}

#[test]
fn short_verify_is_a_numerical_failure() {
    // too short for any window statistics
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), &short(default_config(), 31.0));
    let code = run("verify", &cfg, &d.path().join("o"), &[]);
    assert!(code == 1 || code == 2, "exit {code}");
}
