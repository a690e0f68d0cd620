//! End-to-end checks of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delayfactor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const ONE: &str = r#"{"mode":"unicast","machines":1,"requests":[{"id":"a","arrival":"0","deadline":"2","length":"1"}]}"#;

#[test]
fn gen_is_byte_identical_across_runs() {
    let args = ["gen", "--seed", "1", "--profile", "unicast-random", "--requests", "10"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());
}

#[test]
fn run_single_request_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "one.json", ONE);
    let trace = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");
    let out = run(&[
        "run", "--instance", s(&inst), "--scheduler", "ssf", "--trace", s(&trace), "--report", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["overall"], "1");
    assert!(fs::read_to_string(&trace).unwrap().lines().count() >= 4);
}

#[test]
fn ssfw_without_wait_constant_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "b.json",
        r#"{"mode":"broadcast","machines":1,"pages":[{"id":"A","length":"1"}],"requests":[{"id":"x","arrival":"0","deadline":"1","page":"A"}]}"#,
    );
    let out = run(&["run", "--instance", s(&inst), "--scheduler", "ssfw", "--speed", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "usage");
}

#[test]
fn unknown_scheduler_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "one.json", ONE);
    let out = run(&["run", "--instance", s(&inst), "--scheduler", "edd"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    for name in ["ssf", "ssf-np", "ssf-id", "ssfw", "ssfw-varying", "fifo"] {
        assert!(text.contains(name), "{}", text);
    }
}

#[test]
fn invalid_instance_exits_with_validation_json() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "bad.json",
        r#"{"mode":"unicast","machines":1,"requests":[{"id":"a","arrival":"0","deadline":"1","length":"2"}]}"#,
    );
    let out = run(&["run", "--instance", s(&inst), "--scheduler", "ssf"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    assert!(err["violations"][0].as_str().unwrap().contains("slack < length"));
}

#[test]
fn compare_fills_bound_and_strict_fails_above_it() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "one.json", ONE);
    let ok = run(&["compare", "--instance", s(&inst), "--scheduler", "ssf", "--speed", "2", "--strict"]);
    assert!(ok.status.success());
    let text = String::from_utf8_lossy(&ok.stdout);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[12], "1");
    assert_eq!(row[13], "true");
    let above = run(&["compare", "--instance", s(&inst), "--scheduler", "ssf", "--speed", "5", "--strict"]);
    assert_eq!(above.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&above.stdout).contains(",1/4,false,ok"));
}

#[test]
fn compare_marks_oracle_skips() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("big.json");
    let gen = run(&[
        "gen", "--seed", "3", "--profile", "broadcast-random", "--requests", "70", "--out", s(&inst),
    ]);
    assert!(gen.status.success());
    let out = run(&[
        "compare", "--instance", s(&inst), "--scheduler", "ssfw", "--speed", "5/2", "--wait-c", "1/4",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains("oracle-skipped"), "{}", row);
    assert!(row.contains(",,,"), "{}", row);
}

#[test]
fn oracle_guard_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("big.json");
    run(&["gen", "--seed", "3", "--profile", "broadcast-random", "--requests", "70", "--out", s(&inst)]);
    let out = run(&["oracle", "--instance", s(&inst)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn check_reports_parse_line_and_mode_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "one.json", ONE);
    let trace = dir.path().join("t.jsonl");
    run(&["run", "--instance", s(&inst), "--scheduler", "ssf", "--trace", s(&trace)]);
    let clean = run(&["check", "--instance", s(&inst), "--trace", s(&trace)]);
    assert!(clean.status.success());
    let mismatch = run(&["check", "--instance", s(&inst), "--trace", s(&trace), "--rules", "broadcast"]);
    assert_eq!(mismatch.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&mismatch.stderr).unwrap();
    assert_eq!(err["error"], "mode-mismatch");
    let mut text = fs::read_to_string(&trace).unwrap();
    text.push_str("{not json\n");
    let broken = write(dir.path(), "broken.jsonl", &text);
    let out = run(&["check", "--instance", s(&inst), "--trace", s(&broken)]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "trace-parse");
    assert_eq!(err["line"], text.lines().count());
}

#[test]
fn check_flags_overlapping_segments() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "two.json",
        r#"{"mode":"unicast","machines":1,"requests":[{"id":"a","arrival":"0","deadline":"4","length":"1"},{"id":"b","arrival":"0","deadline":"4","length":"1"}]}"#,
    );
    let trace = [
        r#"{"kind":"segment-start","machine":0,"subject":"request:a","time-num":"0","time-den":"1"}"#,
        r#"{"kind":"segment-start","machine":0,"subject":"request:b","time-num":"1","time-den":"2"}"#,
        r#"{"kind":"segment-end","machine":0,"subject":"request:a","time-num":"1","time-den":"1","work":"1"}"#,
        r#"{"kind":"satisfy","subject":"request:a","time-num":"1","time-den":"1"}"#,
        r#"{"kind":"segment-end","machine":0,"subject":"request:b","time-num":"3","time-den":"2","work":"1"}"#,
        r#"{"kind":"satisfy","subject":"request:b","time-num":"3","time-den":"2"}"#,
    ]
    .join("\n");
    let t = write(dir.path(), "bad.jsonl", &trace);
    let out = run(&["check", "--instance", s(&inst), "--trace", s(&t)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("overlap"));
}

#[test]
fn sweep_cross_product_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write(
        dir.path(),
        "grid.json",
        r#"{"profile":"unicast-random","params":{"requests":6},"schedulers":["ssf"],"eps":["1/4","1/2","1"],"seeds":[0,1,2,3,4,5,6,7,8,9]}"#,
    );
    let out = dir.path().join("s.csv");
    let first = bin()
        .args(["sweep", "--grid", s(&grid), "--out", s(&out)])
        .env("DELAYFACTOR_THREADS", "3")
        .output()
        .unwrap();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 31);
    let again = run(&["sweep", "--grid", s(&grid), "--out", s(&out)]);
    let summary: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(summary["skipped"], 30);
    assert_eq!(summary["written"], 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn adversary_runs_and_guards() {
    let out = run(&["adversary", "broadcast", "--n", "8", "--scheduler", "fifo"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["transcript"]["certificate_factor"], "1");
    let small = run(&["adversary", "broadcast", "--n", "6", "--scheduler", "fifo"]);
    assert_eq!(small.status.code(), Some(1));
    let wrong = run(&["adversary", "unicast", "--scheduler", "fifo"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let gen = run(&["gen", "--help"]);
    assert!(String::from_utf8_lossy(&gen.stdout).contains("bursty-page"));
}
