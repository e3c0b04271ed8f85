use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attreg"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = attreg(&["solve", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,loss,grad_norm,err_to_opt,step_seconds\n"));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert!(summary["final_err"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn max_iters_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = attreg(&["solve", "--max-iters", "0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], false);
}

#[test]
fn invalid_config_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = attreg(&["solve", "--delta=0.5", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gen_then_solve_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    assert!(attreg(&["gen", "--seed", "5", "--out", path(&inst)])
        .status
        .success());
    let solved = dir.path().join("run");
    let out = attreg(&[
        "solve",
        "--instance",
        path(&inst),
        "--seed",
        "5",
        "--out",
        path(&solved),
    ]);
    assert!(out.status.success());

    // Same instance generated inline gives the same trace.
    let inline = dir.path().join("inline");
    assert!(attreg(&["solve", "--seed", "5", "--out", path(&inline)])
        .status
        .success());
    assert_eq!(
        fs::read(solved.join("trace.csv")).unwrap(),
        fs::read(inline.join("trace.csv")).unwrap()
    );
}

#[test]
fn baseline_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let out = attreg(&[
        "solve",
        "--baseline",
        "--epsilon",
        "1e-6",
        "--record-timing",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success());
    let gd = fs::read_to_string(dir.path().join("baseline_trace.csv")).unwrap();
    let newton = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(gd.lines().count() > newton.lines().count());
    let last = newton.lines().last().unwrap();
    assert!(
        !last.ends_with(','),
        "timing column should be filled: {last}"
    );
}

#[test]
fn verify_selection_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let ok = attreg(&[
        "verify",
        "--instances",
        "2",
        "--checks",
        "gradient,psd",
        "--out",
        path(dir.path()),
    ]);
    assert!(ok.status.success());
    let csv = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(csv.starts_with("check,case,metric,threshold,passed\n"));

    let bad = attreg(&[
        "verify",
        "--instances",
        "2",
        "--checks",
        "gradient",
        "--corrupt-gradient",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    let none = attreg(&["verify", "--checks", ""]);
    assert!(none.status.success());
    assert_eq!(
        attreg(&["verify", "--checks", "bogus"]).status.code(),
        Some(1)
    );
}

#[test]
fn landscape_grid_size() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("grid.csv");
    let out = attreg(&[
        "landscape",
        "--resolution",
        "5",
        "--avg-seeds",
        "2",
        "--out",
        path(&file),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&file).unwrap();
    assert_eq!(text.lines().count(), 1 + 25);
    assert!(text.starts_with("u,v,l_exp,l_cent,l_reg,total\n"));

    let lone = attreg(&["landscape", "--dir-u", "1,0,0,0,0"]);
    assert_eq!(lone.status.code(), Some(1));
}

#[test]
fn nce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = attreg(&[
        "nce",
        "--seeds",
        "3",
        "--steps",
        "20",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success());
    let rows = fs::read_to_string(dir.path().join("nce_bounds.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("nce_summary.json")).unwrap()).unwrap();
    assert!(summary["margin"].as_f64().unwrap() > 0.0);
}
