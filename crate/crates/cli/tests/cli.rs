use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bseg")).args(args).output().expect("spawn bseg")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = "\
[model]
preset = reduced

[train]
lr = 0.01
batch_size = 4
epochs = 1
checkpoint_interval = 0

[data]
size = 32
objects = 2
light = normal,low
scenes_per_cell = 5
frames = 2
";

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.ini");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&bseg(&[])), 1);
    assert_eq!(code(&bseg(&["frobnicate"])), 1);
    assert_eq!(code(&bseg(&["eval", "--checkpoint", "x"])), 1);
    assert_eq!(code(&bseg(&["train", "--out", "/tmp/x", "--set", "train.lr"])), 1);
    assert_eq!(code(&bseg(&["train", "--out", "/tmp/x", "--set", "train.nope=1"])), 1);
    assert_eq!(code(&bseg(&["--help"])), 0);
}

#[test]
fn missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.evck");
    let out = bseg(&[
        "eval",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    let out = bseg(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("scene_0009").exists());

    let path_override = format!("data.path={}", data.display());
    let out = bseg(&["train", "--config", &cfg, "--set", &path_override, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.evck", "metrics.csv", "config.txt", "test_report.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let csv = dir.path().join("by_light.csv");
    let out = bseg(&[
        "eval",
        "--checkpoint",
        run.join("model.evck").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--by",
        "light",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("normal") && text.contains("low"), "{text}");
    let report = fs::read_to_string(&csv).unwrap();
    assert_eq!(report.lines().count(), 4, "{report}");

    // A dataset with more classes than the checkpoint is a data error.
    let big = dir.path().join("big");
    let out = bseg(&["gen-data", "--out", big.to_str().unwrap(), "--objects", "5", "--height", "32", "--width", "32"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = bseg(&[
        "eval",
        "--checkpoint",
        run.join("model.evck").to_str().unwrap(),
        "--data",
        big.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    // An empty directory evaluates to an empty report and a failing exit.
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = bseg(&[
        "eval",
        "--checkpoint",
        run.join("model.evck").to_str().unwrap(),
        "--data",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let out = bseg(&["train", "--config", &cfg, "--set", "train.lr=1e30", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("last_good.evck").exists());
}

#[test]
fn grad_check_runs_and_validates_tolerance() {
    let out = bseg(&["grad-check", "--instances", "2", "--coords", "8"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("conv2d"));
    assert!(stdout(&out).contains("(raw "));
    // The tolerance is not allowed to be zero or negative.
    assert_eq!(code(&bseg(&["grad-check", "--instances", "1", "--tol", "0"])), 1);
}
