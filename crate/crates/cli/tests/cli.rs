use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patternnet::training::{evaluate, fit, Checkpoint, Dataset};
use patternnet_cli::RunConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patternnet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, per_class: &str, points: &str, seed: &str) -> PathBuf {
    let out = dir.join("data");
    ok(&["gen-data", "--out", s(&out), "--per-class", per_class, "--points", points, "--seed", seed]);
    out
}

const SMALL_RUN: &str = r#"
threads = 1

[model]
levels = 2
k = 8
branch_widths = [16, 16, 16, 16]
psi_dim = 64
global_dim = 64
head_widths = [32, 32]

[train]
epochs = 2
batch_size = 4
seed = 5
"#;

/// Trains the small configuration through the binary and returns the run
/// directory.
fn train_small(dir: &Path) -> PathBuf {
    let data = gen(dir, "3", "64", "1");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let run_dir = dir.join("run");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--train",
        s(&data.join("train.json")),
        "--test",
        s(&data.join("test.json")),
        "--out",
        s(&run_dir),
    ]);
    run_dir
}

#[test]
fn gen_data_is_deterministic_and_split_four_to_one() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gen(a.path(), "50", "64", "3");
    let db = gen(b.path(), "50", "64", "3");
    for name in ["train.json", "test.json"] {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap());
    }
    let mut files: Vec<_> = fs::read_dir(da.join("clouds")).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 200);
    for f in &files {
        assert_eq!(fs::read(da.join("clouds").join(f)).unwrap(), fs::read(db.join("clouds").join(f)).unwrap());
    }
    let train = Dataset::<f32>::from_manifest(da.join("train.json")).unwrap();
    let test = Dataset::<f32>::from_manifest(da.join("test.json")).unwrap();
    assert_eq!((train.len(), test.len()), (160, 40));
}

#[test]
fn params_budget_sets_the_exit_code() {
    let out = ok(&["params", "--budget", "500000"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("total 300456"));
    assert_eq!(run(&["params", "--budget", "1000"]).status.code(), Some(patternnet_cli::EXIT_DATA));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nlevles = 3\n").unwrap();
    assert_eq!(run(&["params", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(run(&["train", "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ply");
    let out = dir.path().join("p.csv");
    assert_eq!(run(&["partition", "--input", s(&missing), "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn training_through_files_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_small(dir.path());
    let cfg = RunConfig::read(&run_dir.join("run.toml")).unwrap();
    let data = Dataset::<f32>::from_manifest(cfg.train_manifest.as_ref().unwrap()).unwrap();
    let test = Dataset::<f32>::from_manifest(cfg.test_manifest.as_ref().unwrap()).unwrap();
    let direct = fit(&data, Some(&test), &cfg.model, &cfg.train).unwrap();
    let on_disk = fs::read(run_dir.join("checkpoint.pnet")).unwrap();
    assert_eq!(direct.checkpoint(&cfg.train).to_bytes().unwrap(), on_disk);

    let lines = fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    // eval from files equals in-process evaluation
    let out = ok(&["eval", "--checkpoint", s(&run_dir.join("checkpoint.pnet")), "--data", s(&cfg.test_manifest.unwrap())]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let model = Checkpoint::load(run_dir.join("checkpoint.pnet")).unwrap().model::<f32>().unwrap();
    let want = evaluate(&test, &model, 0.0, 5).unwrap();
    assert_eq!(report["overall_accuracy"].as_f64().unwrap(), want.overall_accuracy);
    assert_eq!(report["mapping_loss_mean"].as_f64().unwrap(), want.mapping_loss_mean);
}

#[test]
fn robustness_csv_round_trips_and_matches_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_small(dir.path());
    let ckpt = run_dir.join("checkpoint.pnet");
    let data = dir.path().join("data").join("test.json");
    let csv_path = dir.path().join("robust.csv");
    ok(&[
        "robustness",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--sigma",
        "0,0.05",
        "--neighbors",
        "4,8",
        "--out",
        s(&csv_path),
    ]);
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["sigma", "overall_acc", "macro_acc", "subset_consistency"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((&rows[0][0], &rows[1][0]), ("0.000000", "0.050000"));
    for r in &rows {
        for field in r.iter().skip(1) {
            assert!((0.0..=1.0).contains(&field.parse::<f64>().unwrap()), "{field}");
        }
    }
    let out = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc: f64 = rows[0][1].parse().unwrap();
    assert!((acc - report["overall_accuracy"].as_f64().unwrap()).abs() <= 5e-7);
    let k_rows = fs::read_to_string(csv_path.with_extension("k.csv")).unwrap();
    assert_eq!(k_rows.lines().next(), Some("k,overall_acc,macro_acc"));
    assert_eq!(k_rows.lines().count(), 3);
}

#[test]
fn partition_and_knn_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "1", "128", "2");
    let cloud = fs::read_dir(data.join("clouds")).unwrap().next().unwrap().unwrap().path();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let p = dir.path().join(format!("p{tag}.csv"));
        let k = dir.path().join(format!("k{tag}.csv"));
        ok(&["partition", "--input", s(&cloud), "--levels", "3", "--seed", "7", "--out", s(&p)]);
        ok(&["knn", "--input", s(&cloud), "--neighbors", "5", "--method", "kdtree", "--out", s(&k)]);
        outputs.push((fs::read(&p).unwrap(), fs::read(p.with_extension("json")).unwrap(), fs::read(&k).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 129);
    let summary: serde_json::Value = serde_json::from_slice(&outputs[0].1).unwrap();
    let sizes: Vec<u64> = summary["subset_sizes"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(sizes.iter().sum::<u64>(), 128);
}
