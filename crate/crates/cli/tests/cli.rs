use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nbodyhj"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("NBODYHJ_THREADS").output().expect("spawn nbodyhj")
}

#[test]
fn verify_bundled_parabolic_passes() {
    let s = scenario("two_body_parabolic.json");
    let out = run(&["-q", "verify", "--scenario", s.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("all checks passed"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn dimension_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("two_body_parabolic.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["x0"] = serde_json::json!([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = run(&["-q", "value", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_scenario_file_exits_2() {
    let out = run(&["-q", "value", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["scan", "--scenario", "x.json"]).status.code(), Some(2));
    assert_eq!(run(&["central-config", "--masses", "1,1", "--cluster", "0,z"]).status.code(), Some(2));
    let s = scenario("two_body_parabolic.json");
    assert_eq!(run(&["spectrum", "--scenario", s.to_str().unwrap(), "--t-grid", "5:1:3"]).status.code(), Some(2));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("verify"));
}

#[test]
fn singular_slice_scan_finds_multiplicity_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    let out = run(&[
        "-q",
        "scan",
        "--scenario",
        scenario("singular_mirror.json").to_str().unwrap(),
        "--slice",
        scenario("singular_slice.json").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == "k").unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().any(|r| r[k] == "2"), "no k=2 row in\n{text}");
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["points"], 15);
}

#[test]
fn verify_report_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("two_body_hyperbolic.json");
    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let p = dir.path().join(format!("report{threads}.json"));
        let out = run(&[
            "-q",
            "--threads",
            threads,
            "verify",
            "--scenario",
            s.to_str().unwrap(),
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        reports.push(std::fs::read(&p).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn threads_from_environment() {
    let s = scenario("two_body_parabolic.json");
    let out = bin()
        .args(["-q", "value", "--scenario", s.to_str().unwrap()])
        .env("NBODYHJ_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["value"]["v"].as_f64().unwrap().is_finite());
}

#[test]
fn solve_writes_result_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("two_body_hyperbolic.json");
    let out = run(&["-q", "solve", "--scenario", s.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let res: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(res["scenario_hash"].as_str().unwrap().len(), 40);
    assert_eq!(res["multiplicity"]["k"], 1);
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x_0,"));
    assert!(traj.lines().count() > 100);
}
