use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "count=200",
    "length=20",
    "span=4",
    "dev_count=40",
    "annotation_count=40",
    "embedding_dim=16",
    "hidden=8",
    "dropout=0.0",
    "generator_encoder=\"mean-pool\"",
    "predictor_encoder=\"mean-pool\"",
    "batch_size=50",
    "alpha_g=0.001",
    "lambda2=0.3",
    "audit_pairs=200",
];

fn rationale(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rationale"));
    let (sub, rest) = args.split_first().expect("subcommand");
    cmd.arg(sub);
    for kv in SMALL {
        cmd.args(["--set", kv]);
    }
    cmd.args(rest).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rationale(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, seed: &str) {
    ok(&["synth", "--seed", seed, "--out", dir.to_str().unwrap()]);
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_three_labelled_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, "4");
    synth(&b, "4");
    for name in ["train.jsonl", "dev.jsonl", "annotation.jsonl", "embeddings.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let ann = fs::read_to_string(a.join("annotation.jsonl")).unwrap();
    assert_eq!(ann.lines().count(), 40);
    assert!(ann.lines().all(|l| l.contains("\"rationale\"")));
    let train = fs::read_to_string(a.join("train.jsonl")).unwrap();
    let positives = train.lines().filter(|l| l.contains("\"label\":1")).count();
    assert_eq!(positives, 100);
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn train_eval_and_probe_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "1");
    ok(&["train", "--data-dir", s(&data), "--out", s(&run), "--max-epochs", "2"]);
    for name in ["manifest.json", "history.csv", "metrics.json", "checkpoint.json"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let ckpt = run.join("checkpoint.json");
    let ev = tmp.path().join("eval");
    ok(&["eval", "--data-dir", s(&data), "--out", s(&ev), "--checkpoint", s(&ckpt)]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["f1"].is_number());

    let pr = tmp.path().join("probe");
    ok(&["probe", "--data-dir", s(&data), "--out", s(&pr), "--checkpoint", s(&ckpt), "--split", "annotation"]);
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pr.join("probe.json")).unwrap()).unwrap();
    assert!(probe["lipschitz"]["estimate"].is_number());
    assert_eq!(probe["centroid_gaps"].as_array().unwrap().len(), 2);
}

#[test]
fn training_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "2");
    let mut histories = Vec::new();
    for name in ["x", "y"] {
        let out = tmp.path().join(name);
        ok(&["train", "--deterministic", "--data-dir", s(&data), "--out", s(&out), "--max-epochs", "2"]);
        histories.push(fs::read(out.join("history.csv")).unwrap());
    }
    assert_eq!(histories[0], histories[1]);
}

#[test]
fn one_cell_grid_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3");
    let run = tmp.path().join("run");
    ok(&[
        "train", "--data-dir", s(&data), "--out", s(&run), "--max-epochs", "2",
        "--lambda-mode", "fixed", "--lambda", "0.2",
    ]);
    let grid = tmp.path().join("grid");
    ok(&[
        "grid", "--data-dir", s(&data), "--out", s(&grid), "--max-epochs", "2",
        "--set", "grid_lambdas=[0.2]", "--set", "grid_rates=[0.001]",
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let mut rows = csv::Reader::from_path(grid.join("grid.csv")).unwrap();
    let cells: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(cells.len(), 1);
    let header = rows.headers().unwrap().clone();
    let f1_col = header.iter().position(|h| h == "f1").unwrap();
    let f1: f64 = cells[0][f1_col].parse().unwrap();
    assert_eq!(f1, metrics["annotation"]["F1"].as_f64().unwrap());
}

#[test]
fn skew_emits_both_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "5");
    let out = tmp.path().join("skew");
    ok(&["skew", "--mode", "predictor", "--level", "0", "--data-dir", s(&data), "--out", s(&out), "--max-epochs", "1"]);
    let table = fs::read_to_string(out.join("skew.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("DR") && table.contains("RNP"));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let missing = rationale(&["train", "--data-dir", s(&tmp.path().join("nowhere")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing corpus file"));

    let unknown = rationale(&["train", "--set", "no_such_key=1", "--out", s(&out)]);
    assert_eq!(unknown.status.code(), Some(2));

    let joint = rationale(&["train", "--set", "optimizer=\"joint\"", "--out", s(&out)]);
    assert_eq!(joint.status.code(), Some(2));

    let bad_file = tmp.path().join("bad.toml");
    fs::write(&bad_file, "seed = [").unwrap();
    let parse = rationale(&["synth", "--config", s(&bad_file), "--out", s(&out)]);
    assert_eq!(parse.status.code(), Some(2));
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 7\ncount = 60\n").unwrap();
    let a = tmp.path().join("a");
    ok(&["synth", "--config", s(&cfg), "--set", "count=60", "--out", s(&a)]);
    let b = tmp.path().join("b");
    ok(&["synth", "--config", s(&cfg), "--seed", "8", "--set", "count=60", "--out", s(&b)]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_ne!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(b.join("train.jsonl")).unwrap());
}
