use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadinspect"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        ok(d, &["--seed", "5", "--out", out, "gen-data", "--count", "6", "--size", "64"]);
    }
    ok(d, &["--seed", "6", "--out", "c", "gen-data", "--count", "6", "--size", "64"]);
    let a = read_dir_sorted(&d.join("a"));
    assert_eq!(a.len(), 13);
    assert_eq!(a, read_dir_sorted(&d.join("b")));
    assert_ne!(a, read_dir_sorted(&d.join("c")));
    let manifest = fs::read_to_string(d.join("a/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 6);
}

#[test]
fn gen_data_with_zero_count_writes_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["--out", "z", "gen-data", "--count", "0"]);
    assert_eq!(fs::read_to_string(tmp.path().join("z/manifest.txt")).unwrap(), "");
}

#[test]
fn malformed_config_exits_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (name, text) in [
        ("section.cfg", "[bogus]\n"),
        ("value.cfg", "[train]\nlearning_rate = quick\n"),
        ("key.cfg", "[servo]\nk_pitch = 1\n"),
        ("range.cfg", "[data]\ntrain_fraction = 1.5\n"),
    ] {
        fs::write(d.join(name), text).unwrap();
        let out = run(d, &["--config", name, "gen-data", "--count", "1"]);
        assert!(!out.status.success(), "{name} accepted");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error:"), "{name}");
    }
}

#[test]
fn oracle_evaluation_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--out", "data", "gen-data", "--count", "10", "--size", "64"]);
    let stdout = ok(d, &["--out", "ev", "eval", "--data", "data", "--oracle", "--all"]);
    assert!(stdout.contains("mAP 100.00"), "{stdout}");
    let metrics = fs::read_to_string(d.join("ev/metrics_oracle.txt")).unwrap();
    assert!(metrics.contains("accuracy 100"), "{metrics}");
}

#[test]
fn eval_without_models_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--out", "data", "gen-data", "--count", "2", "--size", "64"]);
    assert!(!run(d, &["eval", "--data", "data"]).status.success());
}

#[test]
fn simulate_files_one_report_per_defect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let stdout = ok(d, &["--out", "sim", "simulate", "--save-frames"]);
    assert!(stdout.contains("reports 5 planted_defects 5"), "{stdout}");
    let reports = fs::read_to_string(d.join("sim/reports.txt")).unwrap();
    assert_eq!(reports.lines().count(), 5);
    for line in reports.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields.len(), 9, "{line}");
        assert!(matches!(fields[2], "cracks" | "pothole"), "{line}");
        assert!(d.join("sim/frames").join(fields[8]).exists(), "{line}");
    }
    // The rendered scene round-trips through its own file.
    ok(d, &["--out", "sim2", "simulate", "--scene", "sim/scene.txt"]);
    assert_eq!(reports, fs::read_to_string(d.join("sim2/reports.txt")).unwrap());
}

#[test]
fn train_then_resume_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "[network]\ninput_size = 64\n[train]\niterations = 4\ncheckpoint_every = 2\n").unwrap();
    ok(d, &["--out", "data", "gen-data", "--count", "6", "--size", "64"]);
    ok(d, &["--config", "run.cfg", "--out", "tr", "train", "--data", "data"]);
    for f in ["network.cfg", "ckpt_000002.rhwt", "ckpt_000004.rhwt", "final.rhwt", "loss.log", "train_summary.txt"] {
        assert!(d.join("tr").join(f).exists(), "{f}");
    }
    ok(d, &["--config", "run.cfg", "--out", "tr", "train", "--data", "data", "--iterations", "6", "--resume", "tr/ckpt_000004.rhwt"]);
    let log = fs::read_to_string(d.join("tr/loss.log")).unwrap();
    let iters: Vec<usize> = log.lines().skip(1).map(|l| l.split_whitespace().next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, vec![1, 2, 3, 4, 5, 6]);

    let stdout = ok(d, &["--config", "run.cfg", "--out", "ev", "eval", "--data", "data", "--weights", "tr/final.rhwt", "--oracle"]);
    assert!(stdout.contains("latency ms"), "{stdout}");
    assert!(d.join("ev/report_tr_final.txt").exists());
}

#[test]
fn bench_reports_both_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["--out", "b", "bench", "--size", "64", "--repetitions", "2", "--warmup", "1"]);
    assert!(stdout.lines().any(|l| l.starts_with("default ")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("improved ")), "{stdout}");
    assert!(stdout.contains("improved_mean >= default_mean"), "{stdout}");
}
