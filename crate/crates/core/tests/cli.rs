mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::three_claims_dir;

fn claimcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimcheck"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn evaluate_mock(run_dir: &Path, extra: &[&str]) -> Output {
    let fixtures = three_claims_dir();
    let input = fixtures.join("input.jsonl");
    let gt = fixtures.join("ground_truth.jsonl");
    let mut args = vec![
        "evaluate",
        "--backend",
        "mock",
        "--fixtures",
        fixtures.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--ground-truth",
        gt.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    claimcheck(&args)
}

#[test]
fn predict_cost_prints_the_budget() {
    let out = claimcheck(&[
        "predict-cost",
        "--pipeline",
        "fastfact",
        "-N",
        "30",
        "-w",
        "10",
        "-M",
        "20",
        "-p",
        "0.5",
        "-k",
        "5",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    for line in ["extractor  3", "searches   50", "verifier   10", "total      13"] {
        assert!(text.contains(line), "missing `{line}` in {text}");
    }
    let safe = claimcheck(&[
        "predict-cost",
        "--pipeline",
        "safe",
        "-N",
        "10",
        "-M",
        "5",
        "-k",
        "1",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&safe.stdout).unwrap();
    assert_eq!(v["total_llm"], 30);
}

#[test]
fn mock_evaluate_then_score_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = evaluate_mock(&run_dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = fs::read_to_string(run_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 6);
    assert!(run_dir.join("manifest.json").exists());

    let before = fs::read(run_dir.join("records.jsonl")).unwrap();
    let out = claimcheck(&["score", "--run-dir", run_dir.to_str().unwrap(), "--gamma", "1.0"]);
    assert!(out.status.success());
    let scores = fs::read_to_string(run_dir.join("scores.jsonl")).unwrap();
    assert_eq!(scores.lines().count(), 6);
    assert_eq!(fs::read(run_dir.join("records.jsonl")).unwrap(), before);
    let first: serde_json::Value = serde_json::from_str(scores.lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "three-claims");

    let out = claimcheck(&["report", "--run-dir", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(run_dir.join("report.txt")).unwrap();
    assert!(text.contains("overall"));
    assert!(text.contains("landmarks"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["complete"], 6);
}

#[test]
fn interrupted_evaluation_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (run_dir, whole) = (dir.path().join("run"), dir.path().join("whole"));
    let out = evaluate_mock(&run_dir, &["--stop-after", "2"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("resume"));
    assert!(evaluate_mock(&run_dir, &[]).status.success());
    assert!(evaluate_mock(&whole, &[]).status.success());
    assert_eq!(
        fs::read(run_dir.join("records.jsonl")).unwrap(),
        fs::read(whole.join("records.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(run_dir.join("manifest.json")).unwrap(),
        fs::read(whole.join("manifest.json")).unwrap()
    );
}

#[test]
fn bad_usage_fails() {
    assert!(!claimcheck(&["frobnicate"]).status.success());
    let out = claimcheck(&["predict-cost", "-N", "3", "-M", "2", "-p", "1.5"]);
    assert!(!out.status.success());
    let out = claimcheck(&["score", "--run-dir", "/nonexistent/claimcheck-run"]);
    assert!(!out.status.success());
}
