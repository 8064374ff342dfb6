//! End-to-end runs of the `dasnet` binary on synthetic data.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dasnet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasnet"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DASNET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = dasnet(args, out);
    assert!(
        o.status.success(),
        "dasnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn err(args: &[&str], out: &Path) -> String {
    let o = dasnet(args, out);
    assert!(!o.status.success(), "dasnet {args:?} unexpectedly succeeded");
    String::from_utf8(o.stderr).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const MLP: &[&str] = &["--net", "mlp3", "--data", "synthetic", "--synthetic-samples", "600", "--seed", "3"];

fn with<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(MLP);
    v.extend_from_slice(extra);
    v
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let s = ok(&with("train", &["--epochs", "4"]), out);
    assert!(s.contains("test accuracy"), "{s}");
    assert!(out.join("mlp3_baseline.dasn").is_file());
    let train = json(&out.join("train_report.json"));
    assert_eq!(train["command"], "train");
    assert_eq!(train["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(train["report"]["epochs"].as_array().unwrap().len(), 4);

    ok(&with("calibrate", &["--theta-fc", "0.9", "--calibration-samples", "200"]), out);
    let cal = json(&out.join("calibration.json"));
    let layers = cal["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 2, "fc1 and fc2 are maskable");
    for l in layers {
        let p = l["p"].as_f64().unwrap();
        assert!(p > 0.0 && p <= 1.0);
    }
    let curve = std::fs::read_to_string(out.join("calibration.csv")).unwrap();
    assert!(curve.starts_with("layer,theta,p\n"));

    ok(&with("finetune", &["--finetune-epochs", "1"]), out);
    assert!(out.join("mlp3_dasnet.dasn").is_file());
    let ft = json(&out.join("finetune_report.json"));
    assert!(ft["report"]["pruning"]["fc_pruned"].as_f64().unwrap() > 0.0);

    let s = ok(&with("eval", &[]), out);
    assert!(s.contains("MAC reduction"), "{s}");
    let cost = std::fs::read_to_string(out.join("cost.csv")).unwrap();
    assert_eq!(cost.lines().count(), 4, "header plus three layers:\n{cost}");

    ok(&with("bench", &["--repetitions", "3"]), out);
    let bench = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 3, "fc2 and fc3 read masked inputs:\n{bench}");

    ok(&with("sweep", &["--thetas", "0.9,1.0", "--finetune-epochs", "1", "--calibration-samples", "100"]), out);
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "theta,pruned_percent,accuracy,accuracy_drop,fc_pruned_percent,conv_channels_pruned_percent");
    assert_eq!(rows.len(), 3);
    let pruned_at_one: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(pruned_at_one, 0.0, "theta 1 keeps every active neuron of a dense synthetic net");

    ok(&with("compress", &["--compress-mode", "quantize"]), out);
    assert!(out.join("mlp3_dasnet_int8.dasn").is_file());
    ok(&with("compress", &["--compress-mode", "prune", "--density", "0.3", "--finetune-epochs", "1"]), out);
    let c = json(&out.join("compress_report.json"));
    let d = c["report"]["fc_weight_density"].as_f64().unwrap();
    assert!((d - 0.3).abs() < 0.01, "{d}");
}

#[test]
fn missing_artifacts_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let e = err(&with("calibrate", &[]), dir.path());
    assert!(e.contains("baseline checkpoint") && e.contains("dasnet train --net mlp3"), "{e}");
    let e = err(&with("eval", &[]), dir.path());
    assert!(e.contains("dasnet finetune --net mlp3"), "{e}");
    ok(&with("train", &["--epochs", "1"]), dir.path());
    let e = err(&with("finetune", &[]), dir.path());
    assert!(e.contains("calibration report") && e.contains("dasnet calibrate --net mlp3"), "{e}");
}

#[test]
fn missing_dataset_directory_names_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let e = err(&["train", "--net", "mlp3", "--data", "mnist"], dir.path());
    assert!(e.contains("DASNET_DATA_DIR"), "{e}");
    let e = err(&["train", "--net", "mlp3", "--data", "/nonexistent/dasnet"], dir.path());
    assert!(e.contains("/nonexistent/dasnet") && e.contains("DASNET_DATA_DIR"), "{e}");
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&with("train", &["--epochs", "2"]), a.path());
    ok(&with("train", &["--epochs", "2"]), b.path());
    let read = |d: &Path| std::fs::read(d.join("mlp3_baseline.dasn")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let c = tempfile::tempdir().unwrap();
    ok(&["train", "--net", "mlp3", "--data", "synthetic", "--synthetic-samples", "600", "--seed", "4", "--epochs", "2"], c.path());
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn unit_thresholds_keep_every_neuron() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let lenet = ["--net", "lenet4", "--data", "synthetic", "--synthetic-samples", "200", "--seed", "1"];
    let mut train = vec!["train", "--epochs", "1"];
    train.extend_from_slice(&lenet);
    ok(&train, out);
    let mut cal = vec!["calibrate", "--theta-conv", "1", "--theta-fc", "1", "--calibration-samples", "40"];
    cal.extend_from_slice(&lenet);
    ok(&cal, out);
    let report = json(&out.join("calibration.json"));
    let layers = report["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 3, "conv1, conv2, fc1");
    for l in layers {
        assert_eq!(l["p"].as_f64().unwrap(), 1.0, "{}", l["name"]);
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"net": "mlp3", "data_kind": "synthetic", "synthetic_samples": 300, "epochs": 3}"#).unwrap();
    let cfg_s = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg_s, "--epochs", "1"], dir.path());
    let r = json(&dir.path().join("train_report.json"));
    assert_eq!(r["report"]["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(r["config"]["synthetic_samples"], 300);

    std::fs::write(&cfg, r#"{"net": "mlp3", "learning_rate": 0.1}"#).unwrap();
    let e = err(&["train", "--config", cfg_s], dir.path());
    assert!(e.contains("learning_rate"), "{e}");
    let e = err(&["calibrate", "--net", "mlp3", "--theta-fc", "1.5"], dir.path());
    assert!(e.contains("theta_fc"), "{e}");
}
