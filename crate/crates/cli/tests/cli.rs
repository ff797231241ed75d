use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn longreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longreach"))
        .args(args)
        .env_remove("LONGREACH_SEED")
        .output()
        .expect("run longreach")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_every_split_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = longreach(&["gen", "--variant", "standard", "--seed", "0", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let expected = [
        ("train", 9_432),
        ("interpolation", 3_000),
        ("long1", 5_000),
        ("long2", 5_000),
        ("long3", 5_000),
        ("long4", 5_000),
        ("long5", 5_000),
    ];
    for (name, n) in expected {
        let file = format!("{name}.tsv");
        let text = fs::read_to_string(a.join(&file)).unwrap();
        assert_eq!(text.lines().count(), n, "{name}");
        assert_eq!(fs::read(a.join(&file)).unwrap(), fs::read(b.join(&file)).unwrap());
    }
    assert_eq!(fs::read(a.join("meta.json")).unwrap(), fs::read(b.join("meta.json")).unwrap());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = Command::new(env!("CARGO_BIN_EXE_longreach"))
        .args(["gen", "--variant", "noisy", "--out", s(&a)])
        .env("LONGREACH_SEED", "4")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(longreach(&["gen", "--variant", "noisy", "--seed", "4", "--out", s(&b)]).status.success());
    assert_eq!(fs::read(a.join("train.tsv")).unwrap(), fs::read(b.join("train.tsv")).unwrap());
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    assert!(longreach(&["gen", "--variant", "standard", "--seed", "1", "--out", s(&data), "--fixture-tables"])
        .status
        .success());
    let o = longreach(&[
        "train", "--data", s(&data), "--attention", "mix", "--seed", "1", "--epochs", "1", "--batch-size", "512",
        "--out", s(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "train_config.json", "train_log.jsonl", "params.manifest", "params.bin"] {
        assert!(model.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(model.join("train_log.jsonl")).unwrap().lines().count(), 1);

    let o = longreach(&["eval", "--model", s(&model), "--data", s(&data), "--splits", "interpolation,long1", "--reproduce"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for split in ["interpolation", "long1"] {
        let r: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(model.join(format!("eval_{split}.json"))).unwrap()).unwrap();
        assert_eq!(r["split"], split);
        assert!(r["seq_acc"].as_f64().unwrap() <= r["seq_acc_be"].as_f64().unwrap());
        assert!(r["hull"]["state_fraction_outside"].is_number());
    }
    assert_eq!(fs::read_to_string(model.join("summary.csv")).unwrap().lines().count(), 3);

    let o = longreach(&["inspect", "--model", s(&model), "--input", "000 t1 t2 ."]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(model.join("trace.json")).unwrap()).unwrap();
    let steps = trace["trace"].as_array().unwrap();
    assert!(!steps.is_empty());
    assert_eq!(steps[0]["alpha"].as_array().unwrap().len(), 4);
    assert!(steps[0]["lambda_percent"].is_number());
    assert!(steps[0]["rho"].as_array().unwrap().len() == 3);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(longreach(&[]).status.code(), Some(2));
    assert_eq!(longreach(&["gen", "--variant", "sideways", "--out", "x"]).status.code(), Some(2));
    assert_eq!(longreach(&["train", "--data", "x"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let o = longreach(&["eval", "--model", s(&missing), "--data", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}
