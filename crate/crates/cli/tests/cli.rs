use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: [&str; 6] = ["--n-train", "48", "--n-eval", "16", "--epochs", "1"];

fn dualcse(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualcse"))
        .args(args)
        .current_dir(cwd)
        .env("DUALCSE_HOME", cwd.join("home"))
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap()
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--seed", "0", "--out", out];
    if !extra.contains(&"--data") {
        args.extend(["--data", "synthetic"]);
    }
    args.extend(SMALL);
    args.extend(extra);
    ok(&dualcse(dir, &args));
    dir.join(out)
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_small(tmp.path(), "run", &["--arch", "cross", "--variant", "full"]);
    assert!(run.join("checkpoint/trainer.json").is_file());
    assert!(run.join("checkpoint/encoder/params.bin").is_file());
    assert!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count() >= 1);
    let m = json(run.join("manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["train"]["variant"], "full");
    assert_eq!(m["seeds"]["seed"], 0);
    assert_eq!(m["toolkit_version"], env!("CARGO_PKG_VERSION"));
    assert!(m["outputs"].as_array().unwrap().len() >= 4);
}

#[test]
fn variant_and_reference_cell_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_small(tmp.path(), "a", &["--variant", "no_intra"]);
    assert_eq!(json(run.join("manifest.json"))["config"]["train"]["variant"], "no_intra");

    let run = train_small(tmp.path(), "b", &["--batch-size", "64", "--lr", "5e-5", "--arch", "cross"]);
    let t = &json(run.join("manifest.json"))["config"]["train"];
    assert_eq!(t["batch_size"], 64);
    assert_eq!(t["learning_rate"], 5e-5);
    assert_eq!(t["encoder"]["architecture"], "cross");
}

#[test]
fn flags_override_config_file_over_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.json"), r#"{"batch_size": 8, "epochs": 3, "encoder": {"max_sequence_length": 32}}"#)
        .unwrap();
    let run = train_small(tmp.path(), "run", &["--config", "cfg.json"]);
    let m = json(run.join("manifest.json"));
    let t = &m["config"]["train"];
    assert_eq!(t["batch_size"], 8); // file
    assert_eq!(t["epochs"], 1); // flag
    assert_eq!(t["encoder"]["max_sequence_length"], 32); // file, nested
    assert_eq!(t["encoder"]["embedding_dim"], 64); // default
    assert!(m["inputs"][0]["path"].as_str().unwrap().ends_with("cfg.json"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.json"), r#"{"batch_size": 0}"#).unwrap();
    let out = dualcse(tmp.path(), &["train", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(tmp.path().join("typo.json"), r#"{"batch_szie": 8}"#).unwrap();
    assert_eq!(dualcse(tmp.path(), &["train", "--config", "typo.json"]).status.code(), Some(2));
    assert_eq!(dualcse(tmp.path(), &["train", "--arch", "tri"]).status.code(), Some(2));
    assert_eq!(dualcse(tmp.path(), &["train", "--lr=-1"]).status.code(), Some(2));
}

#[test]
fn eval_commands_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_small(tmp.path(), "run", &[]);
    let data = run.join("data");
    let dev = data.join("dev.jsonl");
    let test = data.join("test.jsonl");
    let ckpt = run.join("checkpoint");

    let stdout = ok(&dualcse(
        tmp.path(),
        &["eval", "rte", "--ckpt", ckpt.to_str().unwrap(), "--dev", dev.to_str().unwrap(), "--test", test.to_str().unwrap(), "--out", "rte"],
    ));
    assert!(stdout.contains("Avg."));
    let rte = json(tmp.path().join("rte/rte.json"));
    for k in ["exp", "imp", "neu", "con", "avg"] {
        assert!(rte["rte"][k].is_number(), "{k}");
    }
    assert!(rte["gamma"].as_f64().unwrap().abs() <= 1.0);

    ok(&dualcse(tmp.path(), &["eval", "eis", "--baseline", "length", "--pairs", test.to_str().unwrap(), "--out", "len"]));
    let len = json(tmp.path().join("len/eis.json"));
    assert_eq!(len["method"], "length");
    assert_eq!(len["eis"]["accuracy"], 1.0);

    ok(&dualcse(tmp.path(), &["eval", "eis", "--ckpt", ckpt.to_str().unwrap(), "--pairs", test.to_str().unwrap(), "--out", "eis"]));
    let acc = json(tmp.path().join("eis/eis.json"))["eis"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    std::fs::write(
        tmp.path().join("wang.jsonl"),
        "{\"implicit_sentence\": \"it is a bit chilly in here\", \"explicit_sentence\": \"close the window\"}\n",
    )
    .unwrap();
    ok(&dualcse(tmp.path(), &["eval", "eis", "--baseline", "length", "--pairs", "wang.jsonl", "--out", "wang"]));
    assert_eq!(json(tmp.path().join("wang/eis.json"))["pairs"], 1);
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("d.jsonl"), "").unwrap();
    let out = dualcse(tmp.path(), &["eval", "rte", "--ckpt", "nowhere", "--dev", "d.jsonl", "--test", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}

#[test]
fn retrieve_lists_both_views_with_default_k() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_small(tmp.path(), "run", &[]);
    let pool = run.join("data/train.jsonl");
    std::fs::write(tmp.path().join("q.txt"), "lit1 hid2 fil0 lit3\n{\"premise\": \"hid4 lit5\"}\n").unwrap();
    let stdout = ok(&dualcse(
        tmp.path(),
        &["retrieve", "--ckpt", run.join("checkpoint").to_str().unwrap(), "--pool", pool.to_str().unwrap(), "--query-file", "q.txt", "--out", "r"],
    ));
    assert_eq!(stdout.matches("explicit view:").count(), 2);
    assert_eq!(stdout.matches("implicit view:").count(), 2);
    let lines: Vec<Value> = std::fs::read_to_string(tmp.path().join("r/retrieval.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["hits"].as_array().unwrap().len() == 3));
    assert_eq!(lines[0]["view"], "explicit");
    assert_eq!(lines[1]["view"], "implicit");

    std::fs::write(tmp.path().join("empty.txt"), "\n").unwrap();
    let out = dualcse(
        tmp.path(),
        &["retrieve", "--ckpt", run.join("checkpoint").to_str().unwrap(), "--pool", pool.to_str().unwrap(), "--query-file", "empty.txt"],
    );
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn ablate_reports_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--out", "ab"];
    args.extend(SMALL);
    let stdout = ok(&dualcse(tmp.path(), &args));
    for v in ["full", "no_contradiction", "no_intra", "neither"] {
        assert!(stdout.contains(v), "{v}");
        assert!(tmp.path().join("ab").join(v).join("checkpoint").is_dir());
    }
    let rows = json(tmp.path().join("ab/ablation.json"));
    assert_eq!(rows.as_array().unwrap().len(), 4);
}

#[test]
fn grid_marks_the_best_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["grid", "--batch-sizes", "16", "--lrs", "3e-3", "--strict", "--out", "g"];
    args.extend(SMALL);
    ok(&dualcse(tmp.path(), &args));
    let g = json(tmp.path().join("g/grid.json"));
    assert_eq!(g["cells"].as_array().unwrap().len(), 1);
    assert_eq!(g["best"], 0);

    let out = dualcse(tmp.path(), &["grid", "--batch-sizes", "8", "--strict"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerun_from_manifest_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_small(tmp.path(), "run", &[]);
    ok(&dualcse(tmp.path(), &["rerun", "run/manifest.json", "--out", "again"]));
    for f in ["metrics.jsonl", "train.json"] {
        assert_eq!(
            std::fs::read(run.join(f)).unwrap(),
            std::fs::read(tmp.path().join("again").join(f)).unwrap(),
            "{f}"
        );
    }
    let m = json(tmp.path().join("again/manifest.json"));
    assert_eq!(m["config"], json(run.join("manifest.json"))["config"]);
}

#[test]
fn rerun_refuses_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dualcse(tmp.path(), &["make-synthetic", "--n-train", "8", "--n-eval", "4", "--out", "data"]));
    let run = train_small(tmp.path(), "run", &["--data", "data"]);
    std::fs::write(tmp.path().join("data/dev.jsonl"), "").unwrap();
    let out = dualcse(tmp.path(), &["rerun", run.join("manifest.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn default_outputs_go_under_the_home_directory() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&dualcse(tmp.path(), &["make-synthetic", "--n-train", "8", "--n-eval", "4"]));
    let dir = tmp.path().join("home/runs/synthetic");
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "templates.jsonl", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}
