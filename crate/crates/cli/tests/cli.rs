use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_subevent");

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(BIN).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "n_streams=4",
    "--set",
    "split=[1,1,2]",
    "--set",
    "n_bins=24",
    "--set",
    "spans_per_stream=3",
];

fn small_data(root: &Path) -> PathBuf {
    let data = root.join("data");
    let mut args = vec!["generate", "--out", p(&data)];
    args.extend(SMALL);
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    data
}

fn quick_train(data: &Path, out: &Path) -> Run {
    let train = data.join("train");
    let dev = data.join("dev");
    run(&[
        "train",
        "--train",
        p(&train),
        "--dev",
        p(&dev),
        "--out",
        p(out),
        "--set",
        "epochs=3",
        "--set",
        "d_chrono=16",
    ])
}

/// Every dataset file under `dir` with its bytes; the resolved config is
/// skipped since it records the output path.
fn file_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.ends_with("resolved_config.json") {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_default_split_and_repeatable_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let r = run(&["generate", "--out", p(&a)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = r.json();
    let counts: Vec<u64> = ["train", "dev", "test"]
        .iter()
        .map(|s| report["splits"][s]["streams"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, [3, 7, 10]);
    assert!(a.join("resolved_config.json").exists());
    assert_eq!(run(&["generate", "--out", p(&b)]).code, 0);
    assert!(file_bytes(&a) == file_bytes(&b));
    let c = tmp.path().join("c");
    assert_eq!(
        run(&["generate", "--out", p(&c), "--data-seed", "1"]).code,
        0
    );
    assert!(file_bytes(&a) != file_bytes(&c));
}

#[test]
fn bad_paths_and_keys_exit_two() {
    let r = run(&["generate", "--out", "/proc/no/such/dir"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/proc/no/such/dir"), "{}", r.stderr);
    let r = run(&["generate", "--out", "x", "--set", "no_such_key=1"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("no_such_key"));
    let r = run(&["generate", "--config", "/nonexistent.json", "--out", "x"]);
    assert_eq!(r.code, 2);
    assert_eq!(run(&["frobnicate"]).code, 2);
    let r = run(&["train", "--out", "x"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("train_dir"), "{}", r.stderr);
}

#[test]
fn config_file_then_set_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_streams": 4, "split": [1, 1, 2], "n_bins": 10, "spans_per_stream": 2, "data_seed": 5, "lr": 0.5}"#).unwrap();
    let out = tmp.path().join("d");
    let r = run(&[
        "generate",
        "--config",
        p(&cfg),
        "--set",
        "data_seed=6",
        "--data-seed",
        "7",
        "--out",
        p(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let resolved: Value =
        serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["data_seed"], 7);
    assert_eq!(resolved["n_bins"], 10);
    assert_eq!(resolved["lr"], 0.5);
    assert_eq!(resolved["d_chrono"], 128);
    assert_eq!(resolved["out_dir"], p(&out));
}

#[test]
fn train_eval_predict_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path());
    let model = tmp.path().join("model");
    let r = quick_train(&data, &model);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("dev_f1"));
    let summary = r.json();
    assert!(summary["epochs_run"].as_u64().unwrap() <= 3);
    for f in [
        "model.ckpt",
        "model.json",
        "learning_curve.csv",
        "resolved_config.json",
    ] {
        assert!(model.join(f).exists(), "{f}");
    }
    let curve = fs::read_to_string(model.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,train_loss,dev_f1"));

    let test = data.join("test");
    let r = run(&[
        "eval",
        "--model",
        p(&model),
        "--data",
        p(&test),
        "--protocol",
        "bin-level",
        "--agg",
        "micro",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let one = r.json();
    assert_eq!(one["protocol"], "bin-level");
    assert_eq!(one["aggregation"], "micro");
    assert_eq!(one["support"]["streams"], 2);

    let all = run(&["eval", "--model", p(&model), "--data", p(&test), "--all"]).json();
    let combos: Vec<(String, String)> = all
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["protocol"].as_str().unwrap().into(),
                r["aggregation"].as_str().unwrap().into(),
            )
        })
        .collect();
    assert_eq!(combos.len(), 6);
    for proto in ["bin-level", "relaxed", "binary-event"] {
        for agg in ["micro", "macro"] {
            assert!(
                combos.contains(&(proto.into(), agg.into())),
                "{proto} {agg}"
            );
        }
    }
    let relaxed = all
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["protocol"] == "relaxed")
        .unwrap();
    assert_eq!(relaxed["precision"], relaxed["recall"]);

    let pred = run(&["predict", "--model", p(&model), "--data", p(&test)]).json();
    let streams = pred.as_array().unwrap();
    assert_eq!(streams.len(), 2);
    assert_eq!(streams[0]["stream_id"], "match-02");
    assert_eq!(streams[0]["labels"].as_array().unwrap().len(), 24);

    let again = quick_train(&data, &model);
    assert_eq!(again.code, 2);
    assert!(again.stderr.contains("single-shot"));
    let r = run(&[
        "train",
        "--train",
        p(&data.join("train")),
        "--out",
        p(&tmp.path().join("m2")),
        "--resume",
        p(&model),
    ]);
    assert_eq!(r.code, 2);
    assert!(!tmp.path().join("m2").exists());
}

#[test]
fn dev_label_outside_training_scheme_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path());
    let dev = data.join("dev");
    let ann = dev.join("match-01.annotation.json");
    let text = fs::read_to_string(&ann).unwrap();
    let kind = ["goal", "kick-off", "half-time", "yellow-card"]
        .into_iter()
        .find(|k| text.contains(&format!("\"{k}\"")))
        .expect("dev stream has a span");
    fs::write(
        &ann,
        text.replacen(&format!("\"{kind}\""), "\"penalty\"", 1),
    )
    .unwrap();
    let r = quick_train(&data, &tmp.path().join("m"));
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("`penalty`"), "{}", r.stderr);
}

#[test]
fn burst_baseline_needs_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path());
    let test = data.join("test");
    let r = run(&[
        "eval",
        "--baseline",
        "burst",
        "--data",
        p(&test),
        "--protocol",
        "binary-event",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let f1 = r.json()["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let all = run(&["eval", "--baseline", "burst", "--data", p(&test), "--all"]).json();
    assert_eq!(all.as_array().unwrap().len(), 2);
    assert_eq!(
        run(&["eval", "--baseline", "burst", "--data", p(&test)]).code,
        2
    );
    assert_eq!(run(&["eval", "--data", p(&test)]).code, 2);
}

#[test]
fn binary_head_scores_events_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path());
    let model = tmp.path().join("bin");
    let r = run(&[
        "train",
        "--train",
        p(&data.join("train")),
        "--out",
        p(&model),
        "--set",
        "head=binary",
        "--set",
        "chronological=false",
        "--set",
        "epochs=2",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let test = data.join("test");
    assert_eq!(
        run(&["eval", "--model", p(&model), "--data", p(&test)]).code,
        2
    );
    let r = run(&[
        "eval",
        "--model",
        p(&model),
        "--data",
        p(&test),
        "--protocol",
        "binary-event",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let pred = run(&["predict", "--model", p(&model), "--data", p(&test)]).json();
    assert_eq!(pred[0]["event"].as_array().unwrap().len(), 24);
    let r = run(&[
        "train",
        "--train",
        p(&data.join("train")),
        "--out",
        p(&tmp.path().join("x")),
        "--set",
        "head=binary",
    ]);
    assert_eq!(
        r.code, 2,
        "binary head with the chronological layer is rejected"
    );
}

#[test]
fn injected_fault_fails_gradcheck() {
    let r = run(&["gradcheck", "--inject-fault"]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    let report = r.json();
    assert_eq!(report["passed"], false);
    assert!(report["failed"].as_u64().unwrap() > 0);
}
