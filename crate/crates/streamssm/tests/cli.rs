//! Exercises the installed binary end to end: exit codes, file outputs,
//! fault injection, and environment-variable configuration.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamssm"))
}

fn tiny_bench_config_json() -> String {
    serde_json::json!({
        "backbone": {
            "frame_h": 8, "frame_w": 8, "patch_k": 4, "channels": 8,
            "expand": 2, "state_dim": 2, "conv_k": 2, "dt_rank": 2,
            "m_spatial": 1, "n_temporal": 1, "head_hidden": 8,
            "head_out_dim": 4, "max_frames": 4
        },
        "lengths": [2],
        "warmup": 1,
        "repeats": 1,
        "seed": 0,
        "streaming_only": true
    })
    .to_string()
}

#[test]
fn verify_passes_with_exit_zero() {
    let out = bin().args(["verify"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("PASS zoh-discretization"));
    assert!(stdout.contains("PASS streaming-equivalence"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn injected_fault_exits_nonzero() {
    let out = bin().args(["verify", "--inject-fault"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(1), "stdout: {stdout}");
    assert!(stdout.contains("FAIL streaming-equivalence"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = bin()
        .args(["bench", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // missing file is a config error too
    let out = bin()
        .args(["bench", "--config", "/nonexistent/nope.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_writes_csv_with_pinned_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    std::fs::write(&cfg, tiny_bench_config_json()).unwrap();
    let csv = dir.path().join("out.csv");
    let out = bin()
        .args(["bench", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("mode,T,frame_index,latency_us\n"));
    assert!(dir.path().join("out.json").exists());
}

#[test]
fn env_prefix_configures_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    std::fs::write(&cfg, tiny_bench_config_json()).unwrap();
    let csv = dir.path().join("env.csv");
    let out = bin()
        .arg("bench")
        .env("STREAMSSM_CONFIG", &cfg)
        .env("STREAMSSM_OUT", &csv)
        .env("STREAMSSM_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(csv.exists());
}

#[test]
fn gen_data_writes_clips() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-data", "--clips", "2", "--frames", "2", "--height", "8", "--width", "8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let clips: Vec<streamssm::tensor::Tensor<f32>> =
        streamssm::io::load_clip_dir(dir.path()).unwrap();
    assert_eq!(clips.len(), 2);
    assert_eq!(clips[0].shape(), &[1, 3, 2, 8, 8]);
    // zero clips is rejected as a config error
    let out = bin()
        .args(["gen-data", "--clips", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pretrain_toy_writes_both_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["pretrain-toy", "--steps", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let with_align = std::fs::read_to_string(dir.path().join("pretrain_align.csv")).unwrap();
    let without = std::fs::read_to_string(dir.path().join("pretrain_noalign.csv")).unwrap();
    assert!(with_align.starts_with("step,l_total,l_rec,l_align\n"));
    assert!(without.starts_with("step,l_total,l_rec\n"));
    assert_eq!(with_align.lines().count(), 4);
    assert_eq!(without.lines().count(), 4);
}
