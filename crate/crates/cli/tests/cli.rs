use std::path::Path;
use std::process::{Command, Output};

fn hetcd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcd")).args(args).current_dir(cwd).output().expect("spawn hetcd")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = hetcd(args, cwd);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hetcd(&["--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(hetcd(&["synth", "--bogus", "--out", "x"], dir.path()).status.code(), Some(2));
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--out", "b"], d);
    let bad_threshold = hetcd(&["train-occ", "--bundle", "b", "--translation", "b", "--threshold", "1.0", "--out", "o"], d);
    assert_eq!(bad_threshold.status.code(), Some(2));
    let missing = hetcd(&["translate", "--bundle", "b", "--model", "nope.ckpt", "--out", "t"], d);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[cae]\nepochz = 3\n").unwrap();
    let bad_config = hetcd(&["synth", "--config", "bad.toml", "--out", "c"], d);
    assert_eq!(bad_config.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "7", "--out", "a"], d);
    ok(&["synth", "--seed", "7", "--out", "b"], d);
    for f in ["manifest.json", "t1.f32", "t2.f32", "ground_truth.u8"] {
        let (a, b) = (std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
        assert_eq!(a, b, "{f} differs");
    }
    ok(&["synth", "--seed", "8", "--out", "c"], d);
    assert_ne!(std::fs::read(d.join("a/t1.f32")).unwrap(), std::fs::read(d.join("c/t1.f32")).unwrap());
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("fast.toml"), "[cae]\nepochs = 2\nbatches_per_epoch = 20\nhidden_channels = 8\n").unwrap();
    ok(&["synth", "--seed", "7", "--out", "bundle"], d);
    ok(&["train-cae", "--config", "fast.toml", "--bundle", "bundle", "--out", "cae"], d);
    ok(&["translate", "--bundle", "bundle", "--model", "cae/cae.ckpt", "--out", "tr"], d);
    ok(&["cae-map", "--bundle", "bundle", "--translation", "tr", "--out", "cae_map"], d);
    ok(&["train-occ", "--bundle", "bundle", "--translation", "tr", "--npos", "500", "--seed", "3", "--out", "occ"], d);
    ok(&["predict", "--bundle", "bundle", "--translation", "tr", "--model", "occ", "--out", "pred"], d);
    ok(&["eval", "--bundle", "bundle", "--prediction", "pred", "--out", "ev"], d);

    let csv = std::fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,variant,npos,rep,f1,tp,fp,fn,tn"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["two-step", "full", "500"]);
    let f1: f64 = row[4].parse().unwrap();
    assert!(f1 >= 0.85, "F1 {f1}");

    for step in ["bundle", "cae", "tr", "cae_map", "occ", "pred", "ev"] {
        let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(step).join("run.json")).unwrap()).unwrap();
        assert!(run["config"].is_object() && run["argv"].is_array(), "{step}/run.json");
    }
    assert!(d.join("ev/confusion.png").exists());
    assert!(d.join("ev/regions.csv").exists());
}
