//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use cascade_qa::data::load_dataset;
use cascade_qa::inference::read_predictions;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade-qa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: &[&str] = &[
    "--hidden", "8", "--blocks", "1", "--top-k", "4", "--heads", "2", "--vocab-size", "64",
];

fn gen_small(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = run(&[
        "gen-data", "--out", path_str(&out), "--seed", seed, "--pages", "6", "--paragraphs", "2", "--tokens", "6",
        "--vocab-size", "64", "--null-fraction", "0.2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn gen_data_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path(), "a.jsonl", "7");
    let b = gen_small(dir.path(), "b.jsonl", "7");
    let c = gen_small(dir.path(), "c.jsonl", "8");
    let (a_text, b_text) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a_text, b_text);
    assert_ne!(a_text, std::fs::read(&c).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pages"], 6);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["null"].as_u64().unwrap() + manifest["short"].as_u64().unwrap(), 6);
    assert_eq!(load_dataset(&a).unwrap().len(), 6);
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "data.jsonl", "3");
    let ckpt = dir.path().join("model.ckpt");
    let mut args = vec!["train", "--data", path_str(&data), "--out", path_str(&ckpt), "--max-steps", "3", "--seed", "2"];
    args.extend_from_slice(SMALL_MODEL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("model.metrics.jsonl")).unwrap();
    let steps: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|s| s["total"].as_f64().unwrap().is_finite()));

    let preds = dir.path().join("preds.jsonl");
    let o = run(&["predict", "--data", path_str(&data), "--checkpoint", path_str(&ckpt), "--out", path_str(&preds)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_predictions(&preds).unwrap().len(), 6);

    let report = dir.path().join("report.json");
    let thresholds = dir.path().join("thresholds.json");
    let o = run(&[
        "evaluate", "--predictions", path_str(&preds), "--data", path_str(&data), "--calibrate",
        "--thresholds-out", path_str(&thresholds), "--out", path_str(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("long  P") && stdout.contains("short P"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let f1 = report["metrics"]["long"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // calibrated thresholds feed back into predict
    let gated = dir.path().join("gated.jsonl");
    let o = run(&[
        "predict", "--data", path_str(&data), "--checkpoint", path_str(&ckpt), "--thresholds",
        path_str(&thresholds), "--out", path_str(&gated),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn predict_on_empty_dataset_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "data.jsonl", "3");
    let ckpt = dir.path().join("model.ckpt");
    let mut args = vec!["train", "--data", path_str(&data), "--out", path_str(&ckpt), "--max-steps", "1"];
    args.extend_from_slice(SMALL_MODEL);
    assert_eq!(code(&run(&args)), 0);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let preds = dir.path().join("preds.jsonl");
    let o = run(&["predict", "--data", path_str(&empty), "--checkpoint", path_str(&ckpt), "--out", path_str(&preds)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_predictions(&preds).unwrap().is_empty());
}

#[test]
fn grad_check_exit_codes() {
    let small = [
        "grad-check", "--hidden", "4", "--blocks", "1", "--top-k", "3", "--heads", "2", "--vocab-size", "12",
        "--question-len", "2", "--paragraphs", "2,3",
    ];
    let o = run(&small);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));

    let mut faulty = small.to_vec();
    faulty.push("--perturb-gradient");
    let o = run(&faulty);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["gen-data"])), 1);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = dir.path().join("m.ckpt");
    let o = run(&["train", "--data", path_str(&bad), "--out", path_str(&out)]);
    assert_eq!(code(&o), 2);
    let o = run(&["train", "--data", path_str(&bad), "--out", path_str(&out), "--hidden", "7", "--heads", "2"]);
    assert_eq!(code(&o), 1);
}
