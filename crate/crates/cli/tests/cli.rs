use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
seed = 5
samples = 4
out_dir = "from-config"
architecture = "mini-cnn"
metrics = ["ssim", "spearman", "norm_diff"]

[data]
train = { generator = "shapes", seed = 1, n = 80, classes = 2, image_size = 16 }
test = { generator = "shapes", seed = 2, n = 20, classes = 2, image_size = 16 }

[train]
epochs = 2
batch_size = 16

[[bugs]]
name = "flip"
category = "data"
kind = "label_flip"
fraction = 0.2

[[methods]]
method = "grad"

[[methods]]
method = "intgrad"
steps = 4
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debugbench"))
        .current_dir(dir)
        .env_remove("DEBUGBENCH_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok_json(&bin(
        dir.path(),
        &["train", "--config", "tiny.toml", "--out", "model.dbnn"],
    ));
    dir
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(dir.path(), &["evaluate"]).status.code(), Some(2));
    assert_eq!(bin(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["battery", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.toml"));
}

#[test]
fn attribute_flags_override_config_params() {
    let dir = setup();
    let p = dir.path();
    let base = [
        "attribute",
        "--config",
        "tiny.toml",
        "--model",
        "model.dbnn",
        "--method",
        "intgrad",
    ];
    let from_config = ok_json(&bin(p, &base));
    assert_eq!(from_config["params"]["steps"], 4);
    let mut flagged = base.to_vec();
    flagged.extend(["--steps", "9", "--param", "steps=7"]);
    assert_eq!(ok_json(&bin(p, &flagged))["params"]["steps"], 9);
    let mut param = base.to_vec();
    param.extend(["--param", "steps=7"]);
    assert_eq!(ok_json(&bin(p, &param))["params"]["steps"], 7);
    // methods absent from the config fall back to their defaults
    let lrp = [
        "attribute",
        "--config",
        "tiny.toml",
        "--model",
        "model.dbnn",
        "--method",
        "lrp-eps",
    ];
    assert_eq!(ok_json(&bin(p, &lrp))["method"], "lrp-eps");
}

#[test]
fn evaluate_and_export_maps() {
    let dir = setup();
    let p = dir.path();
    for (name, method) in [("a.json", "grad"), ("b.json", "intgrad")] {
        ok_json(&bin(
            p,
            &[
                "attribute",
                "--config",
                "tiny.toml",
                "--model",
                "model.dbnn",
                "--method",
                method,
                "--out",
                name,
            ],
        ));
    }
    let same = ok_json(&bin(
        p,
        &["evaluate", "--a", "a.json", "--b", "a.json", "--metric", "ssim"],
    ));
    assert!((same["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let rho = ok_json(&bin(
        p,
        &["evaluate", "--a", "a.json", "--b", "b.json", "--metric", "spearman"],
    ));
    assert!(rho["value"].as_f64().unwrap().abs() <= 1.0);

    let out = ok_json(&bin(
        p,
        &["export", "--map", "a.json", "--out", "a.pgm", "--palette", "grayscale"],
    ));
    assert_eq!(out["heatmap"], "a.pgm");
    let bytes = std::fs::read(p.join("a.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(bytes.len(), "P5\n16 16\n255\n".len() + 256);
}

#[test]
fn evaluate_rejects_mismatched_shapes() {
    let dir = setup();
    let p = dir.path();
    ok_json(&bin(
        p,
        &[
            "attribute",
            "--config",
            "tiny.toml",
            "--model",
            "model.dbnn",
            "--method",
            "grad",
            "--out",
            "a.json",
        ],
    ));
    let mut map: Value = serde_json::from_str(&std::fs::read_to_string(p.join("a.json")).unwrap()).unwrap();
    let values = &mut map["values"];
    values["shape"] = serde_json::json!([8, 8, 3]);
    values["data"] = serde_json::json!(vec![0.5; 8 * 8 * 3]);
    std::fs::write(p.join("small.json"), map.to_string()).unwrap();

    let out = bin(p, &["evaluate", "--a", "a.json", "--b", "small.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("[16, 16, 3]") && msg.contains("[8, 8, 3]"), "{msg}");
}

#[test]
fn battery_is_deterministic_and_honours_out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("tiny.toml"), TINY).unwrap();
    let first = ok_json(&bin(p, &["battery", "--config", "tiny.toml"]));
    assert_eq!(first["out_dir"], "from-config");
    assert_eq!(first["failed"], 0);
    let report_a = std::fs::read(p.join("from-config/report.json")).unwrap();

    let env = Command::new(env!("CARGO_BIN_EXE_debugbench"))
        .current_dir(p)
        .env("DEBUGBENCH_OUT_DIR", "from-env")
        .args(["battery", "--config", "tiny.toml"])
        .output()
        .unwrap();
    assert_eq!(ok_json(&env)["out_dir"], "from-env");
    assert_eq!(std::fs::read(p.join("from-env/report.json")).unwrap(), report_a);
    assert_eq!(
        std::fs::read(p.join("from-env/scores.csv")).unwrap(),
        std::fs::read(p.join("from-config/scores.csv")).unwrap()
    );

    let reseeded = ok_json(&bin(
        p,
        &["battery", "--config", "tiny.toml", "--seed", "6", "--samples", "3"],
    ));
    assert_eq!(reseeded["out_dir"], "from-config");
    let report_b = std::fs::read(p.join("from-config/report.json")).unwrap();
    assert_ne!(report_a, report_b);
}

#[test]
fn gen_data_and_inject_write_files() {
    let dir = setup();
    let p = dir.path();
    let gen = ok_json(&bin(p, &["gen-data", "--config", "tiny.toml", "--out", "data"]));
    assert_eq!(gen["datasets"][0]["examples"], 80);
    assert!(p.join("data/train.dbds").is_file() && p.join("data/test.dbds").is_file());

    let inj = ok_json(&bin(
        p,
        &[
            "inject",
            "--config",
            "tiny.toml",
            "--model",
            "model.dbnn",
            "--bug",
            "flip",
            "--out",
            "inj",
        ],
    ));
    assert_eq!(inj["applied"], serde_json::json!(["flip"]));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(p.join("inj/pipeline.json")).unwrap()).unwrap();
    assert_eq!(manifest["applied"][0]["kind"], "label_flip");

    let unknown = bin(p, &["inject", "--config", "tiny.toml", "--bug", "nope", "--out", "x"]);
    assert_eq!(unknown.status.code(), Some(1));

    let trained = ok_json(&bin(
        p,
        &[
            "train",
            "--config",
            "tiny.toml",
            "--data",
            "inj/train.dbds",
            "--epochs",
            "1",
            "--out",
            "m2.dbnn",
        ],
    ));
    assert_eq!(trained["epoch_loss"].as_array().unwrap().len(), 1);
}
