use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shapedyn"));
    c.env_remove("SHAPEDYN_THREADS");
    c
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("shapedyn-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn repo_scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(scenario).arg("--out").arg(out).args(extra).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_five_suites() {
    let o = bin().arg("suites").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for s in ["geometry", "classical-gauge", "operator-identities", "equivariance", "conditional-probability"] {
        assert!(text.contains(s), "{s} missing");
    }
    let o = bin().args(["suites", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);
}

#[test]
fn bundled_classical_scenario_passes() {
    let dir = scratch("classical");
    let o = run(&repo_scenario("equilateral_classical.scenario"), &dir, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    let d = v["checks"].as_array().unwrap().iter().find(|c| c["criterion"] == 3 && c["name"] == "chart distance to the geodesic").unwrap();
    assert!(d["value"].as_f64().unwrap() < 1e-3);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() > 0.0);
    assert!(dir.join("newton_vs_geodesic.csv").exists());
}

#[test]
fn same_seed_gives_identical_results() {
    let dir = scratch("determinism");
    let sc = dir.join("geo.scenario");
    std::fs::write(&sc, "suite = geometry\n[numerics]\npoints = 20\n").unwrap();
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    assert!(run(&sc, &a, &["--seed", "9"]).status.success());
    assert!(run(&sc, &b, &["--seed", "9", "--threads", "1"]).status.success());
    assert!(run(&sc, &c, &["--seed", "10"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("results.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join("invariance.csv")).unwrap(), std::fs::read(b.join("invariance.csv")).unwrap());
}

#[test]
fn negative_dt_is_a_config_error() {
    let dir = scratch("negative-dt");
    let sc = dir.join("bad.scenario");
    std::fs::write(&sc, "suite = classical-gauge\n[numerics]\ndt = -0.001\n").unwrap();
    let o = run(&sc, &dir, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("numerics.dt"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_names_nearest_match() {
    let dir = scratch("unknown-suite");
    let sc = dir.join("bad.scenario");
    std::fs::write(&sc, "suite = equivarience\n").unwrap();
    let o = run(&sc, &dir, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("did you mean `equivariance`"), "{}", stderr(&o));
}

#[test]
fn failing_check_exits_one_and_names_it() {
    let dir = scratch("failing");
    let sc = dir.join("coarse.scenario");
    // Far too coarse a step for the geodesic comparison.
    std::fs::write(&sc, "suite = classical-gauge\n[numerics]\ndt = 0.05\nsteps = 200\n").unwrap();
    let o = run(&sc, &dir, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed check:"), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], false);
    assert!(!v["failing"].as_array().unwrap().is_empty());
}

#[test]
fn threads_env_must_be_a_positive_integer() {
    let dir = scratch("threads");
    let o = bin().env("SHAPEDYN_THREADS", "zero").arg("run").arg(repo_scenario("c01_c02_geometry.scenario")).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SHAPEDYN_THREADS"));
}
