//! End-to-end checks of the binary: exit codes, output contracts, and
//! config-file / flag precedence.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timessm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["hippo", "dump", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_dataset_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    train_tiny(&ckpt, dir.path());
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "/no/such/file.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hippo_dump_emits_labeled_sections() {
    let out = run(&["hippo", "dump", "--family", "legs", "--n", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for label in ["# A 4x4", "# B 1x4", "# A_normal 4x4", "# lambda 1x4", "# V 4x4"] {
        assert!(text.contains(label), "missing {label} in dump");
    }
    // complex entries use the re+imj form
    assert!(text.contains('j'));
}

#[test]
fn hippo_dump_rejects_odd_legt() {
    let out = run(&["hippo", "dump", "--family", "legt", "--n", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn kernel_dump_is_csv_with_len_rows() {
    let out = run(&[
        "kernel", "dump", "--family", "legs", "--n", "8", "--delta", "0.01", "--len", "16",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines[0], "l,k");
    assert_eq!(lines.len(), 17);
}

#[test]
fn reconstruct_emits_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = run(&[
        "reconstruct",
        "--family",
        "legt",
        "--n",
        "8",
        "--length",
        "20000",
        "--seed",
        "3",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines[0], "family,n,seed,mse");
    assert!(lines[1].starts_with("legt,8,3,"));
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("i,truth,reconstruction\n"));
    // window of 1 s at dt = 1e-4
    assert_eq!(trace_text.trim().lines().count(), 10_001);
}

#[test]
fn gradcheck_exits_zero_and_lists_ops() {
    let out = run(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("op,max_rel_error\n"));
    assert!(text.contains("complex_scan,"));
}

fn train_tiny(ckpt: &Path, dir: &Path) {
    let metrics = dir.join("metrics.csv");
    let out = run(&[
        "train",
        "--dataset",
        "sine",
        "--rows",
        "400",
        "--lookback",
        "48",
        "--horizon",
        "12",
        "--patch-len",
        "8",
        "--d-model",
        "16",
        "--d-state",
        "8",
        "--n-layers",
        "1",
        "--max-steps",
        "10",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());
    let metrics_text = std::fs::read_to_string(&metrics).unwrap();
    assert!(metrics_text.starts_with("metric,step,value\n"));
    assert!(metrics_text.contains("train_loss,1,"));
    assert!(metrics_text.contains("test_mse,"));
}

#[test]
fn train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    train_tiny(&ckpt, dir.path());
    let header = std::fs::read_to_string(&ckpt).unwrap();
    assert!(header.starts_with("timessm-v1\n"));

    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "sine",
        "--rows",
        "400",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines[0], "dataset,variant,horizon,mse,mae");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 5);
    assert_eq!(fields[0], "sine");
    assert_eq!(fields[1], "s4d-real");
    assert_eq!(fields[2], "12");

    let out = run(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "sine",
        "--rows",
        "400",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(lines[0], "t,pred_c0,target_c0");
    // horizon rows plus the header
    assert_eq!(lines.len(), 13);
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"dataset":"sine","rows":400,"lookback":48,"horizon":24,"patch_len":8,
            "d_model":16,"d_state":8,"n_layers":1,"max_steps":5,"lr":0.0005}"#,
    )
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("metrics.csv");
    // --horizon overrides the file's 24
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--horizon",
        "12",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "sine",
        "--rows",
        "400",
    ]);
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().contains(",12,"), "{text}");
}

#[test]
fn off_grid_learning_rate_is_rejected() {
    let out = run(&[
        "train", "--dataset", "sine", "--rows", "400", "--lr", "0.002",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes_on_a_clean_build() {
    let out = run(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("all checks passed"));
}
