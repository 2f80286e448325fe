use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn kmpc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmpc"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kmpc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The shipped desk config shrunk to a few seconds of work.
fn tiny_config(dir: &Path) -> PathBuf {
    let desk = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")).unwrap();
    let text = desk
        .replace("samples = 3000", "samples = 400")
        .replace("horizon = 20\nepochs = 400", "horizon = 5\nepochs = 2")
        .replace("[control]\nhorizon = 20", "[control]\nhorizon = 5")
        .replace("steps = 300", "steps = 12")
        .replace("seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]", "seeds = [1, 2]");
    assert_ne!(text, desk);
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    tiny_config(dir);

    let stdout = ok(dir, &["generate", "-c", "tiny.toml", "-o", "data"]);
    assert!(stdout.contains("splits: train 300, validation 33, test 67"), "{stdout}");
    for name in ["train.csv", "validation.csv", "test.csv", "dataset.json"] {
        assert!(dir.join("data").join(name).exists());
    }

    for variant in ["dkoia", "dko"] {
        ok(
            dir,
            &[
                "train",
                "-c",
                "tiny.toml",
                "--dataset",
                "data",
                "--variant",
                variant,
                "--seed",
                "4",
                "-o",
                "models",
            ],
        );
        let history = read(dir.join(format!("models/loss_{variant}.csv")));
        let rows: Vec<&str> = history.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "epoch,train_loss,validation_loss");
        assert_eq!(rows.len(), 3);
    }

    let stdout = ok(
        dir,
        &[
            "evaluate",
            "--model",
            "models/model_dkoia.json",
            "--dataset",
            "data",
            "--horizon",
            "5",
            "-o",
            "eval",
        ],
    );
    assert_eq!(stdout.lines().count(), 3);
    let table = read(dir.join("eval/evaluation.csv"));
    assert!(table.contains("split,horizon,variant,error"));
    assert!(table.contains("\ntest,5,dkoia,"));

    ok(
        dir,
        &[
            "control",
            "-c",
            "tiny.toml",
            "--model",
            "models/model_dko.json",
            "--seed",
            "3",
            "-o",
            "ctl",
        ],
    );
    let log = read(dir.join("ctl/closed_loop_dko_seed3.csv"));
    assert!(log.starts_with("# kmpc control\n# input-hash: sha256:"));
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 1 + 13);
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    tiny_config(dir);
    ok(dir, &["generate", "-c", "tiny.toml", "-o", "a"]);
    ok(dir, &["generate", "-c", "tiny.toml", "-o", "b"]);
    for name in ["train.csv", "validation.csv", "test.csv", "dataset.json"] {
        assert_eq!(
            fs::read(dir.join("a").join(name)).unwrap(),
            fs::read(dir.join("b").join(name)).unwrap()
        );
    }
}

#[test]
fn compare_output_is_independent_of_workers() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    tiny_config(dir);
    let stdout = ok(dir, &["compare", "-c", "tiny.toml", "-o", "serial", "--reproducible"]);
    assert!(stdout.contains("static_error"));
    ok(dir, &["compare", "-c", "tiny.toml", "-o", "parallel", "--workers", "3"]);
    for name in [
        "metrics.csv",
        "summary.csv",
        "closed_loop_dkoia_seed2.csv",
        "loss_dko_seed1.csv",
    ] {
        assert_eq!(
            read(dir.join("serial").join(name)),
            read(dir.join("parallel").join(name)),
            "{name}"
        );
    }
    let metrics = read(dir.join("serial/metrics.csv"));
    let rows: Vec<&str> = metrics.lines().filter(|l| !l.starts_with('#')).collect();
    // Header, two seeds times two variants, two mean rows.
    assert_eq!(rows.len(), 7);
    assert!(rows[5].starts_with("mean,dkoia,") && rows[6].starts_with("mean,dko,"));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let config = tiny_config(dir);

    assert_eq!(kmpc(dir, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(kmpc(dir, &["train", "--variant", "edmd"]).status.code(), Some(2));

    let bad = read(&config).replace("[compare]", "[compare]\nbogus = true");
    fs::write(dir.join("bad.toml"), bad).unwrap();
    let out = kmpc(dir, &["generate", "-c", "bad.toml", "-o", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let out = kmpc(dir, &["control", "-c", "tiny.toml", "--model", "missing.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let unstable = read(&config).replace("dt = 0.005", "dt = 5.0");
    fs::write(dir.join("unstable.toml"), unstable).unwrap();
    let out = kmpc(dir, &["generate", "-c", "unstable.toml", "-o", "x"]);
    assert_eq!(out.status.code(), Some(3));

    ok(dir, &["generate", "-c", "tiny.toml", "-o", "data"]);
    ok(dir, &["train", "-c", "tiny.toml", "--dataset", "data", "-o", "m"]);
    let out = kmpc(
        dir,
        &[
            "evaluate",
            "--model",
            "m/model_dkoia.json",
            "--dataset",
            "data",
            "--horizon",
            "1000",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
