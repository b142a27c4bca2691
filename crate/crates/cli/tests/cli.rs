use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "data": {"train_sequences": 4, "eval_sequences": 2, "length": 6,
           "synth": {"height": 32, "width": 32, "min_size": 6, "max_size": 12}},
  "model": {"input_size": [32, 32], "base_channels": 4, "key_channels": 8, "value_channels": 8},
  "train": {"steps": 40, "pretrain_steps": 10, "batch_size": 2},
  "checkpoint_every": 20
}"#;

fn gsfm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsfm")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = gsfm(args, cwd);
    assert!(out.status.success(), "{args:?} failed:\n{}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    ok(&["gen-data", "--out", "data", "-c", "small.json"], dir.path());
    dir
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn losses(log: &Path) -> Vec<(usize, String)> {
    fs::read_to_string(log)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[4..7].join(","))
        })
        .collect()
}

#[test]
fn verify_passes_and_covers_every_op() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["verify"], dir.path());
    for op in [
        "add, sub, mul, div",
        "exp, log, sigmoid",
        "relu",
        "softmax",
        "log_softmax",
        "matmul",
        "conv2d 3x3, zero padding",
        "conv2d 3x3, replicate padding",
        "conv2d 1x1",
        "upsample2x",
        "avg_pool2x",
        "low-frequency module",
        "high-frequency module",
        "affinity, top-k, readout",
        "fused memory read",
        "dice loss",
        "binary cross-entropy",
        "boundary loss",
        "bootstrapped cross-entropy",
        "fusion block",
        "tiny model",
    ] {
        assert!(text.contains(op), "no gradient row for {op}");
    }
    let fft_rows: Vec<&str> = text.lines().filter(|l| l.contains("fft vs direct DFT")).collect();
    assert_eq!(fft_rows.len(), 7);
    for row in fft_rows {
        let err: f64 = row.split_whitespace().rev().nth(2).unwrap().parse().unwrap();
        assert!(err < 1e-6, "{row}");
    }
    assert!(text.contains(", 0 failed"));
}

#[test]
fn default_gen_data_writes_250_sequences_matching_the_manifests() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-data", "--out", "data"], dir.path());
    let mut total = 0;
    for split in ["train", "val"] {
        let root = dir.path().join("data").join(split);
        let manifest = json(root.join("manifest.json"));
        let listed = manifest["sequences"].as_array().unwrap().len();
        let on_disk = fs::read_dir(root.join("JPEGImages")).unwrap().count();
        assert_eq!(listed, on_disk);
        assert_eq!(fs::read_dir(root.join("Annotations")).unwrap().count(), on_disk);
        total += on_disk;
    }
    assert_eq!(total, 250);
}

#[test]
fn gen_data_is_deterministic_and_guards_existing_output() {
    let dir = workspace();
    let p = dir.path();
    ok(&["gen-data", "--out", "again", "-c", "small.json"], p);
    let (a, b) = (files(&p.join("data")), files(&p.join("again")));
    assert_eq!(a, b);
    for f in &a {
        assert_eq!(fs::read(p.join("data").join(f)).unwrap(), fs::read(p.join("again").join(f)).unwrap(), "{}", f.display());
    }
    assert_eq!(gsfm(&["gen-data", "--out", "data", "-c", "small.json"], p).status.code(), Some(2));
    ok(&["gen-data", "--out", "data", "--force", "-c", "small.json"], p);
}

#[test]
fn train_resume_and_eval_round_trip() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--data", "data", "--out", "run", "-c", "small.json"], p);
    for f in ["config.json", "seed.txt", "run.json", "metrics.json", "train_log.csv", "checkpoint/config.json", "checkpoints/step_000020/state.json"] {
        assert!(p.join("run").join(f).exists(), "missing {f}");
    }
    let snapshot = json(p.join("run/config.json"));
    assert_eq!(snapshot["model"]["boundary_loss_weight"], 0.05);
    assert_eq!(snapshot["seed"], 0);
    assert!(json(p.join("run/run.json"))["git_describe"].is_string());

    let log = losses(&p.join("run/train_log.csv"));
    assert_eq!(log.len(), 50);
    let mean = |r: &[(usize, String)]| r.iter().map(|(_, l)| l.split(',').next().unwrap().parse::<f64>().unwrap()).sum::<f64>() / r.len() as f64;
    assert!(mean(&log[40..]) < mean(&log[..10]), "loss did not fall");

    // Resuming from the step-20 checkpoint repeats steps 20..50 exactly.
    ok(&["train", "--data", "data", "--out", "resumed", "--resume", "run/checkpoints/step_000020", "--no-eval"], p);
    let resumed = losses(&p.join("resumed/train_log.csv"));
    assert_eq!(resumed.first().unwrap().0, 20);
    assert_eq!(resumed, log[20..].to_vec());

    ok(&["eval", "--data", "data", "--checkpoint", "run/checkpoint", "--out", "ev1", "--save-masks", "--jobs", "2"], p);
    ok(&["eval", "--data", "data", "--checkpoint", "run/checkpoint", "--out", "ev2", "--jobs", "1"], p);
    let (r1, r2) = (json(p.join("ev1/metrics.json")), json(p.join("ev2/metrics.json")));
    assert_eq!(r1, r2);
    for key in ["per_sequence", "global", "num_objects"] {
        assert!(r1.get(key).is_some(), "report lacks {key}");
    }
    for key in ["J", "F", "JF"] {
        assert!(r1["global"][key].is_f64());
    }
    let csv = fs::read_to_string(p.join("ev1/metrics.csv")).unwrap();
    assert!(csv.starts_with("sequence,J,F,JF"));
    assert!(csv.contains("__global__"));

    // Saved masks score the same as the model that produced them.
    ok(&["eval", "--data", "data", "--predictions", "ev1/masks", "--out", "ev3"], p);
    assert_eq!(json(p.join("ev3/metrics.json"))["global"], r1["global"]);

    ok(&["infer", "--checkpoint", "run/checkpoint", "--input", "data", "--out", "masks"], p);
    assert_eq!(files(&p.join("masks")), files(&p.join("ev1/masks")));
}

#[test]
fn ground_truth_as_predictions_scores_one() {
    let dir = workspace();
    let p = dir.path();
    ok(&["eval", "--data", "data", "--predictions", "data/val/Annotations", "--out", "gt"], p);
    let g = &json(p.join("gt/metrics.json"))["global"];
    assert_eq!((g["J"].as_f64(), g["F"].as_f64(), g["JF"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn eval_rejects_a_checkpoint_of_another_size() {
    let dir = workspace();
    let p = dir.path();
    ok(&["train", "--data", "data", "--out", "run", "-c", "small.json", "--set", "train.steps=1", "--set", "train.pretrain_steps=0", "--no-eval"], p);
    ok(&["gen-data", "--out", "big", "--set", "data.train_sequences=1", "--set", "data.eval_sequences=1", "--set", "data.length=3"], p);
    let out = gsfm(&["eval", "--data", "big", "--checkpoint", "run/checkpoint", "--out", "ev"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expects 32x32"));
}

#[test]
fn non_finite_training_dumps_the_batch() {
    let dir = workspace();
    let p = dir.path();
    let out = gsfm(&["train", "--data", "data", "--out", "run", "-c", "small.json", "--set", "train.lr=1e250"], p);
    assert_eq!(out.status.code(), Some(1));
    let report = json(p.join("run/nan_dump/report.json"));
    assert!(report["error"].as_str().unwrap().contains("non-finite"));
    assert!(p.join("run/nan_dump/sample0_labels0.png").exists());
}

#[test]
fn ablate_emits_one_row_per_variant_and_seed() {
    let dir = workspace();
    let p = dir.path();
    ok(
        &[
            "ablate",
            "--data",
            "data",
            "--out",
            "abl",
            "-c",
            "small.json",
            "--set",
            r#"ablation.variants=["baseline","full","high/high"]"#,
            "--set",
            "ablation.seeds=[0,1]",
            "--set",
            "ablation.train.steps=3",
            "--set",
            "ablation.train.pretrain_steps=1",
            "--set",
            "ablation.train.batch_size=1",
        ],
        p,
    );
    let csv = fs::read_to_string(p.join("abl/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2);
    let full: Vec<&str> = rows.iter().copied().filter(|r| r.starts_with("full,")).collect();
    assert_eq!(full.len(), 2);
    for r in full {
        let f: Vec<&str> = r.split(',').collect();
        for v in &f[5..8] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    assert!(fs::read_to_string(p.join("abl/ablation.svg")).unwrap().starts_with("<svg"));
    assert!(json(p.join("abl/metrics.json"))["medians"]["full"]["JF"].is_f64());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(gsfm(&["frobnicate"], p).status.code(), Some(2));
    assert_eq!(gsfm(&["gen-data", "--out", "d", "--set", "model.unknown=1"], p).status.code(), Some(2));
    assert_eq!(gsfm(&["gen-data", "--out", "d", "--set", "model.top_k"], p).status.code(), Some(2));
    assert_eq!(gsfm(&["train", "--data", "missing", "--out", "r"], p).status.code(), Some(2));
    assert_eq!(gsfm(&["eval", "--data", "missing", "--out", "r"], p).status.code(), Some(2));
}
