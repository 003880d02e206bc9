use std::path::Path;
use std::process::Command;

use kooba_cli::report::{BenchReport, BenchTable};

fn kooba(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kooba"))
        .args(args)
        .env("KOOBA_LOG", "error")
        .output()
        .expect("binary runs")
}

fn validator() -> jsonschema::Validator {
    let text = include_str!("../schema/report.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kooba(&[
        "train", "--dataset", "lorenz", "--order", "6", "--controls", "1", "--epochs", "50", "--lr", "0.001",
        "--seq-len", "8", "--seed", "7", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = read_json(&dir.path().join("report.json"));
    assert!(validator().is_valid(&json));
    let report: BenchReport = serde_json::from_value(json.clone()).unwrap();
    assert_eq!(report.loss_curve.len(), 50);
    assert!(report.time_ms > 0.0 && report.memory_bytes_estimate > 0);
    assert_eq!(serde_json::to_value(&report).unwrap(), json);
    let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 51);
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn repeats_carry_spread() {
    let dir = tempfile::tempdir().unwrap();
    let o = kooba(&[
        "train", "--dataset", "synthetic", "--epochs", "3", "--repeats", "3", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: BenchReport = serde_json::from_value(read_json(&dir.path().join("report.json"))).unwrap();
    assert_eq!(report.repeats.len(), 3);
    assert_eq!(report.repeats.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
    let mean = report.repeats.iter().map(|r| r.mse_mean).sum::<f64>() / 3.0;
    assert!((report.summary.mse_mean.mean - mean).abs() < 1e-15);
    assert!(report.summary.mse_mean.stddev >= 0.0);
}

#[test]
fn eval_reproduces_train() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(kooba(&["train", "--dataset", "lorenz", "--epochs", "5", "--out", out]).status.success());
    let model = dir.path().join("model.json");
    let model = model.to_str().unwrap();
    let o = kooba(&["eval", "--model", model, "--dataset", "lorenz", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let train = read_json(&dir.path().join("report.json"));
    let eval = read_json(&dir.path().join("eval_report.json"));
    assert_eq!(train["mse_per_feature"], eval["mse_per_feature"]);
    assert!(validator().is_valid(&eval));

    assert!(kooba(&["eval", "--model", model, "--horizon", "4", "--out", out]).status.success());
    let eval = read_json(&dir.path().join("eval_report.json"));
    assert_eq!(eval["config"]["model"]["horizon"], 4);

    let o = kooba(&["eval", "--model", model, "--order", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("model.json");
    std::fs::write(&bad, "{\"format\": \"kooba-model\", \"version\": 99}").unwrap();
    let o = kooba(&["eval", "--model", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 99"));
}

#[test]
fn missing_dataset_exits_4_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = kooba(&["train", "--dataset", "csv:/definitely/not/here.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.join("report.json").exists());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(kooba(&["train", "--order", "40", "--out", out]).status.code(), Some(2));
    assert_eq!(kooba(&["train", "--controls", "3", "--out", out]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nepochs = \"many\"\n").unwrap();
    assert_eq!(kooba(&["train", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = kooba(&[
        "train", "--lr", "1e300", "--batch-size", "1", "--epochs", "2", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn bench_records_failures_in_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kooba(&[
        "bench", "--dataset", "synthetic", "--dataset", "csv:/missing.csv", "--epochs", "2", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = read_json(&dir.path().join("bench.json"));
    assert!(validator().is_valid(&json));
    let table: BenchTable = serde_json::from_value(json).unwrap();
    assert_eq!(table.rows[0].status, "ok");
    assert_eq!(table.rows[1].status, "error");
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let o = kooba(&["bench", "--dataset", "csv:/missing.csv", "--out", out]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn timing_grows_with_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |epochs: &str| {
        let out = dir.path().join(epochs);
        assert!(kooba(&["train", "--dataset", "lorenz", "--epochs", epochs, "--out", out.to_str().unwrap()])
            .status
            .success());
        read_json(&out.join("report.json"))["time_ms"].as_f64().unwrap()
    };
    let short = run("10");
    let long = run("50");
    assert!(long > short, "{long} <= {short}");
}
