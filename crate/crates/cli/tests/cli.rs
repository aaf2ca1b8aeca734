use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cad")).args(args).env("CAD_THREADS", "1").output().expect("spawn cad")
}

fn run(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![kind, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cad(&args)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("dualize", &dir.path().join("absent.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"kind": "axioms", "preset": "standard-ca", "bogus": 1}"#).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run("axioms", &cfg, &out, &[]).status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn kind_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("reduce", &configs().join("standard-ca-axioms.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn standard_ca_axioms_pass_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("standard-ca-axioms.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run("axioms", &cfg, &a, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(run("axioms", &cfg, &b, &[]).status.code(), Some(0));
    let ra = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("report.json")).unwrap());
    assert!(a.join("timings.json").is_file());
    let r = report(&a);
    assert_eq!(r["kind"], "axioms");
    assert!(r["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS graph_curvature[")));
}

#[test]
fn abelian_dualize_reports_inverse_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run("dualize", &configs().join("abelian-r4-dualize.json"), &out, &["--levels", "1,2,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(&out);
    assert_eq!(r["levels"]["background"][0][0].as_f64(), Some(4.0));
    let dual = r["levels"]["dual_background"][0][0].as_f64().unwrap();
    assert!((dual - 0.25).abs() <= 1e-12);
    assert_eq!(r["levels"]["levels"].as_array().unwrap().len(), 3);
    assert!(out.join("f.csv").is_file() && out.join("f_dual.csv").is_file());
}

#[test]
fn bad_levels_flag_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("axioms", &configs().join("standard-ca-axioms.json"), &dir.path().join("out"), &["--levels", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn every_shipped_config_parses() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = cad_core::scenario::ScenarioConfig::load(&path);
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
    }
}
