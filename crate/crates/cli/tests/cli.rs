//! End-to-end checks of the binary: exit codes, diagnostics, and the
//! sweep -> report -> figures flow on a tiny configuration.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CFG: &str = "\
model.input_dim = 4
model.hidden = 8
model.num_classes = 3
dataset.dim = 4
dataset.train_per_class = 30
dataset.test_per_class = 15
dataset.separation = 3
train.epochs = 5
unlearn.epochs = 2
unlearn.lr = 0.1
batch_size = 16
sweep.methods = SRL
sweep.addons = none,focus
sweep.seeds = 0,1
";

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn report_on_empty_directory_fails_with_diagnostic() {
    let dir = tmp("cli-empty");
    let out = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn bad_config_reports_line_number() {
    let dir = tmp("cli-badcfg");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "train.lr = 0.1\nnonsense.key = 1\n").unwrap();
    let out = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn sweep_report_figures_flow() {
    let dir = tmp("cli-flow");
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY_CFG).unwrap();

    let sweep = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        sweep.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    assert!(dir.join("aggregate.csv").exists());
    assert!(dir.join("runs/SRL-focus-s1/metrics.csv").exists());
    assert!(dir.join("runs/SRL-focus-s1/manifest.cfg").exists());

    let report = bin().arg("report").arg("--out").arg(&dir).output().unwrap();
    assert!(report.status.success());
    let table = String::from_utf8_lossy(&report.stdout);
    assert!(table.contains("SRL-focus"), "stdout: {table}");

    let figures = bin().arg("figures").arg("--out").arg(&dir).output().unwrap();
    assert!(figures.status.success());
    assert!(dir.join("figures/metrics_vs_epoch.csv").exists());
    assert!(dir.join("figures/agree_prob_hist.csv").exists());

    // --seed restricts the sweep; the existing seed-0 run is reused.
    let single = bin()
        .arg("unlearn")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .arg("--seed")
        .arg("0")
        .output()
        .unwrap();
    assert!(single.status.success());
    let stdout = String::from_utf8_lossy(&single.stdout);
    assert!(stdout.contains("(reused)"), "stdout: {stdout}");
}
