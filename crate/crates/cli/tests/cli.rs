use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn evifusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evifusion"))
        .args(args)
        .env_remove("EVIFUSION_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = evifusion(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// The single run directory under an output root.
fn run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn small_dataset(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", path(dir), "--n", "300", "--seed", "2"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["synth", "--out", path(dir), "--n", "5000", "--seed", "7", "--positive-rate", "0.118"]);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(name, _)| name == "manifest.json"));
    assert_eq!(fa, fb);

    let csv = fs::read_to_string(a.join("data.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let label = header.iter().position(|&h| h == "label").unwrap();
    let positives = csv.lines().skip(1).filter(|l| l.split(',').nth(label) == Some("positive")).count() as f64;
    let sigma = (5000.0f64 * 0.118 * 0.882).sqrt();
    assert!((positives - 590.0).abs() <= 3.0 * sigma, "{positives}");
}

#[test]
fn invalid_rate_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = evifusion(&["synth", "--out", path(tmp.path()), "--positive-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.csv");
    let out = evifusion(&["train", "--data", path(&missing), "--output", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_eval_reproduces_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let root = tmp.path().join("runs");
    small_dataset(&data, &[]);
    let train = ["train", "--data", path(&data), "--epochs", "4", "--output", path(&root)];
    ok(&train);
    let dir = run_dir(&root);

    let summary: Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 5);
    assert!(summary["aggregate"]["auroc"]["mean"].is_f64());
    let hash = summary["config_hash"].as_str().unwrap();
    assert!(dir.file_name().unwrap().to_string_lossy().ends_with(&hash[..12]));

    for seed in 0..5 {
        let seed_dir = dir.join(format!("seed-{seed}"));
        let report = seed_dir.join("report.json");
        let checkpoint: Value = serde_json::from_slice(&fs::read(seed_dir.join("checkpoint.json")).unwrap()).unwrap();
        assert_eq!(checkpoint["config_hash"], hash);
        let again = tmp.path().join(format!("eval-{seed}.json"));
        ok(&["eval", "--checkpoint", path(&seed_dir.join("checkpoint.json")), "--out", path(&again)]);
        assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());
    }

    // Same config hash: refuse, then overwrite with --force.
    let refused = evifusion(&train);
    assert_eq!(refused.status.code(), Some(2));
    let mut forced = train.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn data_sources_grouping_builds_one_source_per_block() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let root = tmp.path().join("runs");
    small_dataset(&data, &["--blocks", "4", "--block-dim", "2", "--text-dim", "0"]);
    ok(&[
        "train", "--data", path(&data), "--fusion-grouping", "data-sources", "--sources", "4",
        "--seed", "0", "--epochs", "2", "--output", path(&root),
    ]);
    let ckpt: Value =
        serde_json::from_slice(&fs::read(run_dir(&root).join("seed-0/checkpoint.json")).unwrap()).unwrap();
    let names: Vec<&str> = ckpt["sources"].as_array().unwrap().iter().map(|s| s["spec"]["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["block0", "block1", "block2", "block3"]);

    let wrong = evifusion(&[
        "train", "--data", path(&data), "--fusion-grouping", "data-sources", "--sources", "3",
        "--seed", "0", "--epochs", "2", "--output", path(&tmp.path().join("other")),
    ]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let root = tmp.path().join("env-root");
    small_dataset(&data, &[]);
    let out = Command::new(env!("CARGO_BIN_EXE_evifusion"))
        .args(["train", "--data", path(&data), "--seed", "1", "--epochs", "1"])
        .env("EVIFUSION_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir(&root).join("seed-1/report.json").exists());
}

#[test]
fn combine_prints_the_fused_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    fs::write(&a, r#"{"singletons": [0.6, 0.0], "ignorance": 0.4}"#).unwrap();
    fs::write(&b, r#"{"singletons": [0.0, 0.5], "ignorance": 0.5}"#).unwrap();
    let out = ok(&["combine", path(&a), path(&b)]);
    let fused: Value = serde_json::from_slice(&out.stdout).unwrap();
    let s: Vec<f64> = fused["singletons"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let ignorance = fused["ignorance"].as_f64().unwrap();
    for (got, want) in s.iter().chain([&ignorance]).zip([3.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    let details: Value = serde_json::from_slice(&ok(&["combine", "--details", path(&a), path(&b)]).stdout).unwrap();
    assert!((details["conflict"][0][1].as_f64().unwrap() - 0.3).abs() < 1e-12);

    let c = tmp.path().join("c.json");
    fs::write(&c, r#"{"singletons": [0.6, 0.0, 0.1], "ignorance": 0.3}"#).unwrap();
    assert_eq!(evifusion(&["combine", path(&a), path(&c)]).status.code(), Some(3));
}

#[test]
fn check_grad_on_default_config() {
    let out = ok(&["check-grad"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["max_error"].as_f64().unwrap() <= 1e-4);
    assert!(report["checked"].as_u64().unwrap() >= 200);
    assert_eq!(report["passed"], true);
}
