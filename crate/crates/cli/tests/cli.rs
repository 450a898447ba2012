use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nldpc::config::RunConfig;
use nldpc_cli::{EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VACUOUS, EXPORT_FILES};
use tempfile::TempDir;

fn nldpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nldpc"))
        .args(args)
        .env("NLDPC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/di.cfg");
    let mut cfg = RunConfig::load(&preset).unwrap();
    cfg.policy.hidden = vec![8, 8];
    cfg.lyapunov.hidden = vec![8, 8];
    cfg.training.epochs = 2;
    cfg.training.train_samples = 40;
    cfg.training.val_samples = 20;
    cfg.training.test_samples = 0;
    cfg.training.batch_size = 20;
    cfg.verification.samples = 50;
    let path = dir.join("small.cfg");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

/// Trains the small config; returns `(dir, config, checkpoint)`.
fn trained() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let ck = dir.path().join("ck.json");
    let out = nldpc(&["train", "--config", s(&cfg), "--out", s(&ck), "--quiet"]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    (dir, cfg, ck)
}

#[test]
fn train_writes_checkpoint_and_loss_history() {
    let (dir, _, ck) = trained();
    assert!(ck.exists());
    let csv = std::fs::read_to_string(dir.path().join("ck.json.loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss");
    assert_eq!(lines.len(), 3);
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nldpc(&["train", "--config", "/nonexistent/x.cfg", "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(code(&out), EXIT_CONFIG);
    assert!(!dir.path().join("o.json").exists());
}

#[test]
fn unknown_subcommand_and_bad_flags() {
    assert_eq!(code(&nldpc(&["fly"])), EXIT_CONFIG);
    assert_eq!(code(&nldpc(&["train"])), EXIT_CONFIG);
    assert_eq!(code(&nldpc(&["--help"])), EXIT_OK);
}

#[test]
fn overflowing_plant_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("1.2", "1e300", 1);
    std::fs::write(&cfg, text).unwrap();
    let out = nldpc(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o.json")), "--quiet"]);
    assert_eq!(code(&out), EXIT_NUMERIC, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
}

#[test]
fn simulate_writes_trajectory_and_rejects_bad_states() {
    let (dir, _, ck) = trained();
    let traj = dir.path().join("traj.csv");
    let out = nldpc(&["simulate", "--ckpt", s(&ck), "--x0", "-1.5,2", "--steps", "10", "--out", s(&traj)]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(text.lines().count(), 12);

    for bad in ["1", "1,2,3", "a,b", "nan,0"] {
        let out = nldpc(&["simulate", "--ckpt", s(&ck), "--x0", bad, "--out", s(&traj)]);
        assert_eq!(code(&out), EXIT_CONFIG, "{bad}");
    }
    let out = nldpc(&["simulate", "--ckpt", s(&dir.path().join("none.json")), "--x0", "0,0", "--out", s(&traj)]);
    assert_eq!(code(&out), EXIT_CONFIG);
}

#[test]
fn verify_exit_codes() {
    let (dir, cfg, ck) = trained();
    let report = dir.path().join("report.json");
    let out = nldpc(&["verify", "--ckpt", s(&ck), "--config", s(&cfg), "--out", s(&report)]);
    assert!([EXIT_OK, EXIT_VACUOUS].contains(&code(&out)));
    assert!(report.exists());

    let out = nldpc(&["verify", "--ckpt", s(&ck), "--config", s(&cfg), "--samples", "1", "--out", s(&report)]);
    assert_eq!(code(&out), EXIT_VACUOUS);
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"vacuous\": true"));

    for delta in ["0", "1", "-0.5"] {
        let out = nldpc(&["verify", "--ckpt", s(&ck), "--config", s(&cfg), "--delta", delta, "--out", s(&report)]);
        assert_eq!(code(&out), EXIT_CONFIG, "delta {delta}");
    }
}

#[test]
fn export_all_writes_every_file() {
    let (dir, _, ck) = trained();
    let out_dir = dir.path().join("plots");
    let out = nldpc(&[
        "export", "--ckpt", s(&ck), "--what", "all", "--grid", "101", "--trajectories", "4", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    for f in EXPORT_FILES {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    for f in ["field.csv", "surface.csv", "vdiff_learned.csv", "vdiff_quadratic.csv"] {
        let rows = std::fs::read_to_string(out_dir.join(f)).unwrap().lines().count();
        assert_eq!(rows, 101 * 101 + 1, "{f}");
    }
    let out = nldpc(&["export", "--ckpt", s(&ck), "--what", "contours", "--out", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_CONFIG);
}
