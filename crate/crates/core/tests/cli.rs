mod common;

use std::process::{Command, Output};

use segkit::harness::{DatasetIndex, Predictions};

fn segkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segkit")).args(args).output().unwrap()
}

fn fixture(name: &str) -> String {
    common::fixture_dir().join(name).to_string_lossy().into_owned()
}

#[test]
fn eval_prints_the_report() {
    let out = segkit(&["eval", "--config", &fixture("eval.toml")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.starts_with("| Model | F1-score | IoU | Precision | Recall | Latency (ms) | Raw inference latency (ms) |")
    );
    assert!(text.contains("| replay-fixture |"));
}

#[test]
fn eval_output_is_stable_across_runs_and_workers() {
    let runs: Vec<Vec<u8>> = ["1", "1", "4", "0"]
        .iter()
        .map(|w| {
            segkit(&[
                "eval",
                "--config",
                &fixture("eval.toml"),
                "--workers",
                w,
                "--format",
                "csv",
            ])
            .stdout
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert!(runs.iter().all(|r| *r == runs[0]));
}

#[test]
fn forward_demo_is_reproducible() {
    let a = segkit(&["forward-demo", "--seed", "7"]);
    let b = segkit(&["forward-demo", "--seed", "7"]);
    let c = segkit(&["forward-demo", "--seed", "8"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("logits [2, 8, 16, 16]"), "{text}");
}

#[test]
fn forward_demo_dump_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.bin");
    let out = segkit(&[
        "forward-demo",
        "--seed",
        "3",
        "--size",
        "96",
        "--dump",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let tensors = segkit::fixture::load_bundle(&path).unwrap();
    assert_eq!(tensors[1].dims(), [2, 8, 24, 24]);
}

#[test]
fn missing_config_is_an_io_error() {
    let out = segkit(&["eval", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.toml"));
}

#[test]
fn invalid_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[dataset]\nroot = \".\"\ncolour = 3\n").unwrap();
    let out = segkit(&["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    assert_eq!(segkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        segkit(&["forward-demo", "--seed", "1", "--size", "50"]).status.code(),
        Some(1)
    );
    assert_eq!(segkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_writes_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("bench.csv");
    let out = segkit(&[
        "bench",
        "--config",
        &fixture("bench_replay.toml"),
        "--format",
        "csv",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "replay-5ms");
    assert_eq!(row[9], "2");
}

#[test]
fn rasterize_writes_ground_truth_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("gt.json");
    let out = segkit(&[
        "rasterize",
        "--labels",
        &fixture("labels"),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = Predictions::load(&out_path).unwrap();
    let ds = DatasetIndex::load(&common::fixture_dir()).unwrap();
    assert_eq!(preds.images.len(), ds.len());
    let gts = ds.ground_truth(0).unwrap();
    let recs = preds.get(&ds.images[0].id);
    assert_eq!(recs.len(), gts.len());
    assert_eq!(&recs[0].decode_mask().unwrap(), gts[0].mask.as_ref().unwrap());
}
