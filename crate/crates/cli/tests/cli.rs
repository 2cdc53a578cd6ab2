use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn revdict(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revdict"))
        .args(args)
        .env_remove("REVDICT_MODEL_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = revdict(args);
    assert!(
        out.status.success(),
        "revdict {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes a small corpus and builds its index; returns the data dir.
fn prepare(root: &Path, languages: &str, words: &str) -> std::path::PathBuf {
    let data = root.join("data");
    ok(&["synth", "--out", p(&data), "--languages", languages, "--word-count", words, "--seed", "4"]);
    for f in ["corpus.jsonl", "vocab.txt", "words.xa.txt"] {
        assert!(data.join(f).exists(), "synth did not write {f}");
    }
    let mut args = vec![
        "build-index".to_string(),
        "--vocab".into(),
        p(&data.join("vocab.txt")).into(),
        "--out".into(),
        p(&data.join("index.json")).into(),
    ];
    for lang in languages.split(',') {
        args.push("--words".into());
        args.push(format!("{lang}={}", p(&data.join(format!("words.{lang}.txt")))));
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let summary = json(&args);
    assert!(summary["k"].as_u64().unwrap() >= 1);
    for lang in languages.split(',') {
        assert!(summary["words"][lang].as_u64().unwrap() > 0);
    }
    data
}

const SMALL_MODEL: [&str; 10] = [
    "--d-model",
    "16",
    "--num-heads",
    "2",
    "--ffn-dim",
    "32",
    "--max-seq-len",
    "32",
    "--batch-size",
    "16",
];

/// `train` arguments for the prepared data and a small model.
fn train_args(data: &Path, model: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "train".into(),
        "--corpus".into(),
        p(&data.join("corpus.jsonl")).into(),
        "--vocab".into(),
        p(&data.join("vocab.txt")).into(),
        "--index".into(),
        p(&data.join("index.json")).into(),
        "--out".into(),
        p(model).into(),
    ];
    args.extend(SMALL_MODEL.iter().chain(extra).map(|s| s.to_string()));
    args
}

fn strs(args: &[String]) -> Vec<&str> {
    args.iter().map(String::as_str).collect()
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = revdict(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = revdict(&["query", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(revdict(&[]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = revdict(&["query", "--checkpoint", p(&dir.path().join("missing")), "--def", "x", "--def-lang", "xa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    let out = revdict(&["eval", "--corpus", "c.jsonl", "--split", "unseen"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("REVDICT_MODEL_DIR"));
}

#[test]
fn monolingual_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), "xa", "60");
    let model = dir.path().join("model");
    let log = dir.path().join("train.jsonl");
    let args = train_args(
        &data,
        &model,
        &[
            "--epochs", "3", "--seed", "5", "--unseen-words", "10", "--dev-words", "10", "--seen-entries", "20", "--log",
            p(&log),
        ],
    );
    let summary = json(&strs(&args));
    assert_eq!(summary["seed"], 5);
    for f in ["model.ckpt", "vocab.txt", "index.json", "splits.jsonl", "train_summary.json"] {
        assert!(model.join(f).exists(), "train did not write {f}");
    }
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);

    let splits = model.join("splits.jsonl");
    let report = json(&["eval", "--checkpoint", p(&model), "--corpus", p(&splits), "--split", "unseen"]);
    assert_eq!(report["split"], "unseen");
    assert_eq!(report["language_pair"], "xa-xa");
    let m = &report["metrics"];
    assert!(m["n_samples"].as_u64().unwrap() >= 10);
    for key in ["1", "10", "100"] {
        let acc = m["acc_at"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let grouped = json(&["eval", "--checkpoint", p(&model), "--corpus", p(&splits), "--split", "seen", "--group-by", "pieces"]);
    let total: u64 = grouped["groups"]
        .as_object()
        .unwrap()
        .values()
        .map(|g| g["n_samples"].as_u64().unwrap())
        .sum();
    assert_eq!(total, grouped["metrics"]["n_samples"].as_u64().unwrap());

    // the model directory can also come from the environment
    let out = Command::new(env!("CARGO_BIN_EXE_revdict"))
        .args(["eval", "--corpus", p(&splits), "--split", "unseen"])
        .env("REVDICT_MODEL_DIR", &model)
        .output()
        .unwrap();
    assert!(out.status.success());
    let from_env: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(from_env, report);

    let definition = fs::read_to_string(&splits)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|e| e["split"] == "unseen")
        .unwrap()["definition"]
        .as_str()
        .unwrap()
        .to_string();
    let q = ["--checkpoint", p(&model), "--def", &definition, "--def-lang", "xa", "--target-lang", "xa"];
    let table = ok(&[&["query"][..], &q, &["--top-n", "4"]].concat());
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().next().unwrap().trim_start().starts_with("1 "));
    let response = json(&[&["query"][..], &q, &["--top-n", "4", "--json"]].concat());
    let candidates = response["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 4);
    let ranks: Vec<u64> = candidates.iter().map(|c| c["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [0, 1, 2, 3]);
    let surfaces: Vec<&str> = table.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    let json_surfaces: Vec<&str> = candidates.iter().map(|c| c["surface"].as_str().unwrap()).collect();
    assert_eq!(surfaces, json_surfaces);

    let export = json(&[&["export-scores"][..], &q].concat());
    let k = export["k"].as_u64().unwrap() as usize;
    let rows = export["subword_scores"].as_array().unwrap();
    assert_eq!(rows.len(), k);
    let vocab_len = fs::read_to_string(data.join("vocab.txt")).unwrap().lines().count();
    assert_eq!(rows[0].as_array().unwrap().len(), vocab_len);
    let best = export["words"]
        .as_array()
        .unwrap()
        .iter()
        .max_by(|a, b| a["score"].as_f64().unwrap().total_cmp(&b["score"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(best["surface"], candidates[0]["surface"]);

    let out = revdict(&[&["query"][..], &q[..6], &["--target-lang", "xb"]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("xb"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), "xa", "40");
    let config = dir.path().join("train.json");
    let body = serde_json::json!({
        "corpus": data.join("corpus.jsonl"),
        "vocab": data.join("vocab.txt"),
        "index": data.join("index.json"),
        "out": dir.path().join("model"),
        "epochs": 5,
        "seed": 9,
        "dev_words": 8,
        "d_model": 16,
        "num_heads": 2,
        "ffn_dim": 32,
        "max_seq_len": 32
    });
    fs::write(&config, body.to_string()).unwrap();
    let summary = json(&["train", "--config", p(&config), "--epochs", "1"]);
    assert_eq!(summary["train"]["epochs"], 1);
    assert_eq!(summary["seed"], 9);
    assert_eq!(summary["model"]["d_model"], 16);

    fs::write(&config, r#"{"epochs": 1, "epoch_count": 2}"#).unwrap();
    let out = revdict(&["train", "--config", p(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch_count"));
}

#[test]
fn cross_lingual_holdout_with_pivot_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = prepare(dir.path(), "xa,xb", "60");
    let model = dir.path().join("model");
    let lexicon = data.join("lexicon.tsv");
    let args = train_args(
        &data,
        &model,
        &[
            "--epochs",
            "2",
            "--mode",
            "unaligned_multilingual",
            "--head",
            "embedding_dot",
            "--holdout-definition-language",
            "xa",
            "--holdout-target-language",
            "xb",
            "--holdout-test-words",
            "10",
            "--holdout-dev-words",
            "5",
            "--lexicon",
            p(&lexicon),
            "--ablation",
            "0.5",
        ],
    );
    ok(&strs(&args));
    let splits = model.join("splits.jsonl");
    let report = json(&[
        "eval",
        "--checkpoint",
        p(&model),
        "--corpus",
        p(&splits),
        "--split",
        "test",
        "--lexicon",
        p(&lexicon),
        "--pivot-m",
        "5",
    ]);
    assert_eq!(report["language_pair"], "xa-xb");
    assert!(report["metrics"]["n_samples"].as_u64().unwrap() >= 10);
    let pivot = &report["pivot_baseline"];
    assert_eq!(pivot["n_samples"], report["metrics"]["n_samples"]);
    assert!((0.0..=1.0).contains(&pivot["acc_at"]["10"].as_f64().unwrap()));

    let cross = ok(&["query", "--checkpoint", p(&model), "--def", "x", "--def-lang", "xa", "--target-lang", "xb"]);
    assert_eq!(cross.lines().count(), 10);
}

#[test]
fn grad_check_tiny_passes_and_failures_exit_nonzero() {
    let out = ok(&["grad-check", "--config", "tiny"]);
    assert!(out.lines().next().unwrap().starts_with("tensor"));
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|l| l.ends_with("pass")), "{out}");

    let out = revdict(&["grad-check", "--config", "tiny", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed the gradient check"));

    let dir = tempfile::tempdir().unwrap();
    let setup = dir.path().join("gc.json");
    fs::write(&setup, r#"{"mode": "monolingual", "normalization": "log_softmax", "examples": 2}"#).unwrap();
    let report = json(&["grad-check", "--config", p(&setup), "--head", "embedding_dot", "--json"]);
    assert!(report["tensors"].as_array().unwrap().iter().all(|t| t["pass"] == true));
}

fn untrained_model(root: &Path) -> std::path::PathBuf {
    let data = prepare(root, "xa", "30");
    let model = root.join("model");
    ok(&strs(&train_args(&data, &model, &["--epochs", "1", "--dev-words", "5"])));
    model
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    use std::io::{Read, Write};
    let mut stream = std::net::TcpStream::connect(addr).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut response = String::new();
    stream.read_to_string(&mut response).ok()?;
    Some(response)
}

#[test]
fn serve_answers_health_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let model = untrained_model(dir.path());
    let addr = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().to_string()
    };
    let mut child = Command::new(env!("CARGO_BIN_EXE_revdict"))
        .args(["serve", "--bind", &addr])
        .env("REVDICT_MODEL_DIR", &model)
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let mut response = None;
    for _ in 0..100 {
        response = http_get(&addr, "/v1/health");
        if response.is_some() {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let response = response.expect("server never answered");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body: Value = serde_json::from_str(response.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["languages"], serde_json::json!(["xa"]));
}

#[test]
fn serve_reports_bind_failure() {
    let dir = tempfile::tempdir().unwrap();
    let model = untrained_model(dir.path());
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = revdict(&["serve", "--checkpoint", p(&model), "--bind", &addr]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("binding"));
}
