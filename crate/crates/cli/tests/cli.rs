use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duetgen::evaluation::parse_report;
use duetgen::pose_ingest::{parse_detections, repair_detections};
use duetgen::sequence::CleanedSequenceFile;
use duetgen::training::read_train_report;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duetgen"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_seq(path: PathBuf) -> CleanedSequenceFile {
    CleanedSequenceFile::read(fs::File::open(path).unwrap()).unwrap()
}

const TRAIN: &[&str] = &["train", "--synthetic", "--epochs", "5", "--seed", "7"];

#[test]
fn preprocess_reports_injected_corruptions() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &[
        "synth", "--style", "orbit", "--frames", "80", "--joints", "29", "--seed", "4",
        "--detections", "raw.jsonl", "--swap", "30", "--drop", "10,11", "--ghost", "20,50",
    ]);
    let stdout = ok(d, &["preprocess", "--in", "raw.jsonl", "--out", "clean.seq"]);
    assert!(
        stdout.contains("frames imputed 2, swaps fixed 1, ghosts culled 2"),
        "{stdout}"
    );
    assert_eq!(read_seq(d.join("clean.seq")).shape, [80, 29, 3]);

    ok(d, &["preprocess", "--in", "raw.jsonl", "--out", "raw.seq", "--dct-keep", "1.0"]);
    let frames = parse_detections(std::io::BufReader::new(fs::File::open(d.join("raw.jsonl")).unwrap()), 29).unwrap();
    let (repaired, _) = repair_detections(&frames, 30.0).unwrap();
    let (a, b) = repaired.to_sequences().unwrap();
    let file = read_seq(d.join("raw.seq"));
    for (x, y) in file.dancer1.iter().chain(&file.dancer2).zip(a.data().iter().chain(b.data())) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn preprocess_many_files_and_parse_failure() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for (name, seed) in [("a.jsonl", "1"), ("b.jsonl", "2")] {
        ok(d, &["synth", "--frames", "40", "--joints", "29", "--seed", seed, "--detections", name]);
    }
    let stdout = ok(d, &["preprocess", "--in", "a.jsonl", "b.jsonl", "--out", "clean"]);
    assert_eq!(stdout.lines().count(), 2);
    assert!(d.join("clean/a.seq").exists() && d.join("clean/b.seq").exists());

    fs::write(d.join("bad.jsonl"), "{\"frame\": 0, \"people\": [{\"score\": 0.9, \"joints\": [1, 2]}]}\n").unwrap();
    let out = run(d, &["preprocess", "--in", "bad.jsonl", "--out", "bad.seq"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("M=29"));
    assert!(!d.join("bad.seq").exists());
}

#[test]
fn training_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, TRAIN);
    let report = fs::read(d.join("train_report.csv")).unwrap();
    let ckpt = fs::read(d.join("model.ckpt")).unwrap();
    let rows = read_train_report(report.as_slice()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.total.is_finite()));

    ok(d, TRAIN);
    assert_eq!(fs::read(d.join("train_report.csv")).unwrap(), report);
    assert_eq!(fs::read(d.join("model.ckpt")).unwrap(), ckpt);
}

#[test]
fn focused_only_training() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["train", "--synthetic", "--epochs", "2", "--p", "1.0", "--report", "r.csv", "--checkpoint", "m.ckpt"]);
    let rows = read_train_report(fs::read(d.join("r.csv")).unwrap().as_slice()).unwrap();
    assert!(rows.iter().all(|r| r.mode_fraction == 1.0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.toml"), "[train]\nepochs = 3\np = 1.0\nseq_len = 32\n").unwrap();
    ok(d, &["train", "--synthetic", "--config", "cfg.toml", "--epochs", "2"]);
    let rows = read_train_report(fs::read(d.join("train_report.csv")).unwrap().as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.mode_fraction == 1.0));

    fs::write(d.join("typo.toml"), "[train]\nepohcs = 3\n").unwrap();
    assert!(!run(d, &["train", "--synthetic", "--config", "typo.toml", "--checkpoint", "x.ckpt"]).status.success());
    assert!(!d.join("x.ckpt").exists());
}

#[test]
fn generate_and_evaluate() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, TRAIN);
    ok(d, &["synth", "--frames", "160", "--seed", "99", "--out", "test.seq"]);

    let args = ["generate", "--checkpoint", "model.ckpt", "--leader", "test.seq", "--context", "16", "--seed", "3"];
    ok(d, &args);
    let gen = read_seq(d.join("generated.seq"));
    let test = read_seq(d.join("test.seq"));
    assert_eq!(gen.shape, [64, 4, 3]);
    assert_eq!(gen.dancer1[..], test.dancer1[..64 * 12]);
    assert_eq!(gen.dancer2[..16 * 12], test.dancer2[..16 * 12]);
    let csv = fs::read(d.join("generated.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 1 + 64 * 2 * 4);
    let first = fs::read(d.join("generated.seq")).unwrap();
    ok(d, &args);
    assert_eq!(fs::read(d.join("generated.seq")).unwrap(), first);
    assert_eq!(fs::read(d.join("generated.csv")).unwrap(), csv);

    ok(d, &["generate", "--checkpoint", "model.ckpt", "--mode", "duet", "--length", "64", "--out", "duet.seq", "--csv", "duet.csv"]);
    let duet = read_seq(d.join("duet.seq"));
    assert_eq!(duet.shape, [64, 4, 3]);
    assert_eq!(duet.dancer1.len(), duet.dancer2.len());

    ok(d, &["evaluate", "--checkpoint", "model.ckpt", "--test", "test.seq", "--sequences", "3"]);
    let table = parse_report(fs::read(d.join("horizon_report.csv")).unwrap().as_slice()).unwrap();
    let refs: Vec<_> = table.rows.iter().map(|r| (r.horizon, r.paper_reference)).collect();
    assert_eq!(refs, vec![(16, Some(0.0126)), (32, Some(0.0197)), (48, Some(0.0219)), (64, Some(0.0263))]);

    ok(d, &["evaluate", "--checkpoint", "model.ckpt", "--test", "test.seq", "--horizons", "8,16", "--sequences", "2", "--out", "short.csv"]);
    let text = fs::read_to_string(d.join("short.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);

    ok(d, &["evaluate", "--oracle", "echo", "--test", "test.seq", "--sequences", "3", "--out", "echo.csv"]);
    let echo = parse_report(fs::read(d.join("echo.csv")).unwrap().as_slice()).unwrap();
    assert!(echo.rows.iter().all(|r| r.mse == 0.0));
}

#[test]
fn missing_inputs_fail_without_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--frames", "80", "--out", "test.seq"]);
    let out = run(d, &["generate", "--checkpoint", "absent.ckpt", "--leader", "test.seq"]);
    assert!(!out.status.success());
    assert!(!d.join("generated.seq").exists() && !d.join("generated.csv").exists());

    fs::write(d.join("empty.seq"), "{\"fps\": 30.0, \"shape\": [0, 4, 3], \"dancer1\": [], \"dancer2\": []}").unwrap();
    let out = run(d, &["evaluate", "--oracle", "echo", "--test", "empty.seq"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data"));
    assert!(!d.join("horizon_report.csv").exists());
}

#[test]
fn help_lists_every_flag() {
    let dir = TempDir::new().unwrap();
    let help = ok(dir.path(), &["train", "--help"]);
    for flag in ["--synthetic", "--epochs", "--seed", "--p ", "--alpha", "--beta", "--eta", "--lr", "--config", "--checkpoint", "--report"] {
        assert!(help.contains(flag), "missing {flag}");
    }
    let help = ok(dir.path(), &["evaluate", "--help"]);
    assert!(help.contains("--horizons") && help.contains("--oracle"));
    let help = ok(dir.path(), &["generate", "--help"]);
    assert!(help.contains("--mode") && help.contains("--context") && help.contains("--length"));
}
