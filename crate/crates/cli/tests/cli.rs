use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn invercl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invercl"))
        .args(args)
        .current_dir(dir)
        .env("INVERCL_THREADS", "2")
        .output()
        .expect("binary runs")
}

const TINY: &str = "seed=1
dataset.classes=4
dataset.dim=6
dataset.samples_per_class=20
network.dims=6,8,6
network.activations=leaky,none
inversion.steps_per_layer=5
inversion.steps_full=10
contrastive.epochs=2
cl.tasks=2
cl.epochs=2
buffer.a=8
buffer.b=8
";

#[test]
fn run_then_invert_and_slice_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();

    let out = invercl(&["run", "tiny.cfg", "--out-dir", "run"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,task_id,accuracy\n"));
    assert!(metrics.contains("summary,final_avg,"));

    let ckpt = dir.path().join("run/checkpoints/stage2.ckpt");
    let out = invercl(
        &[
            "invert",
            ckpt.to_str().unwrap(),
            "--class",
            "1",
            "--count",
            "3",
            "--out-dir",
            "inv",
            "--config",
            "tiny.cfg",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = fs::read_to_string(dir.path().join("inv/inverted.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    assert!(rows.starts_with("x0,x1,x2,x3,x4,x5\n"));
    assert!(dir.path().join("inv/inversion_trace.csv").exists());

    fs::write(
        dir.path().join("feats.csv"),
        "f0,f1,f2,f3,f4,f5\n0.1,0.2,0.3,0.4,0.5,0.6\n1,0,0,0,0,0\n",
    )
    .unwrap();
    let out = invercl(
        &[
            "invert",
            ckpt.to_str().unwrap(),
            "--feature-file",
            "feats.csv",
            "--out-dir",
            "inv2",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("inv2/inverted.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let out = invercl(
        &[
            "landscape",
            ckpt.to_str().unwrap(),
            "--grid",
            "3",
            "--radius",
            "0.5",
            "--out-dir",
            "ls",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in ["landscape_full.csv", "landscape_layer.csv"] {
        let text = fs::read_to_string(dir.path().join("ls").join(name)).unwrap();
        assert_eq!(text.lines().count(), 10);
    }
}

#[test]
fn gen_data_writes_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let out = invercl(
        &["gen-data", "tiny.cfg", "--out-dir", "data", "--seed", "5"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("data/dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 20);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "cl.tasks=many\n").unwrap();
    let out = invercl(&["run", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cl.tasks"));
}

#[test]
fn diverging_run_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("boom.cfg"), format!("{TINY}cl.lr=1e300\n")).unwrap();
    let out = invercl(&["run", "boom.cfg", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage"));
}

#[test]
fn invert_rejects_unknown_class() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), format!("{TINY}cl.tasks=1\n")).unwrap();
    assert!(invercl(&["run", "tiny.cfg", "--out-dir", "r"], dir.path())
        .status
        .success());
    let out = invercl(
        &["invert", "r/checkpoints/stage1.ckpt", "--class", "9"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}
