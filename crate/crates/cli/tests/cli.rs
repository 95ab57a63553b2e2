//! Binary-level behavior: exit codes, config handling, determinism, and
//! output-file hygiene.

use std::path::PathBuf;
use std::process::{Command, Output};

fn csap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("csap-cli-{}-{name}", std::process::id()))
}

#[test]
fn flops_standard_512_prints_the_exact_total() {
    let out = csap(&["flops", "--variant", "standard", "--input-size", "512"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("176,160,768"), "{text}");
    assert!(text.contains("1 MAC = 2 FLOPs"));
}

#[test]
fn flops_csap_reports_zero_qk_at_target_stages() {
    let out = csap(&["flops", "--variant", "csap", "--input-size", "512", "--format", "kv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("qk_matmul_stage2 = 0"));
    assert!(text.contains("qk_matmul_stage3 = 0"));
    assert!(text.contains("attention_matmul_total = 14680064"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = csap(&["flops", "--does-not-exist"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_honored_and_flags_override_it() {
    let path = temp_path("override.conf");
    std::fs::write(&path, "input_size = 64\nvariant = standard\n").unwrap();
    let out = csap(&["--config", path.to_str().unwrap(), "flops"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("standard decoder, input 64x64"), "{text}");

    let out = csap(&[
        "--config",
        path.to_str().unwrap(),
        "--variant",
        "csap",
        "flops",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("csap decoder, input 64x64"), "{text}");
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn invalid_config_values_exit_2() {
    // 3 does not divide d = 128
    let path = temp_path("badheads.conf");
    std::fs::write(&path, "n_heads = 3\n").unwrap();
    let out = csap(&["--config", path.to_str().unwrap(), "flops"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("n_heads"), "{err}");
    std::fs::remove_file(&path).unwrap();

    let path = temp_path("unknownkey.conf");
    std::fs::write(&path, "mystery = 7\n").unwrap();
    let out = csap(&["--config", path.to_str().unwrap(), "flops"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 1") && err.contains("mystery"), "{err}");
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn usage_errors_never_produce_partial_output_files() {
    let out_path = temp_path("no-partial.csv");
    let cfg_path = temp_path("no-partial.conf");
    std::fs::write(&cfg_path, "steps = banana\n").unwrap();
    let out = csap(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "train-toy",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists(), "partial output file was created");
    std::fs::remove_file(&cfg_path).unwrap();
}

#[test]
fn predict_is_byte_identical_across_runs() {
    let args = ["predict", "--input-size", "64", "--seed", "5"];
    let a = csap(&args);
    let b = csap(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn train_toy_writes_a_csv_trace_and_checkpoint_predict_loads_it() {
    let trace = temp_path("trace.csv");
    let ckpt = temp_path("ckpt");
    let cfg_path = temp_path("train.conf");
    std::fs::write(
        &cfg_path,
        "input_size = 64\ndataset_size = 6\nholdout = 2\nbatch_size = 2\nsteps = 6\neval_every = 3\n",
    )
    .unwrap();
    let out = csap(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        trace.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "train-toy",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("step,loss,miou\n"));
    assert_eq!(csv.lines().count(), 7); // header + 6 steps
    assert!(ckpt.join("manifest.txt").exists());

    // the checkpoint round-trips through predict
    let out = csap(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "1",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "predict",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::remove_file(&trace).unwrap();
    std::fs::remove_file(&cfg_path).unwrap();
    std::fs::remove_dir_all(&ckpt).unwrap();
}

#[test]
fn gradcheck_exits_zero_when_all_errors_pass() {
    let out = csap(&["gradcheck", "--seed", "42", "--eps", "1e-3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn attn_sim_rejects_degenerate_single_token_grids() {
    // 64x64 at defaults pools the source stage to a single context token;
    // the shuffled baseline does not exist there.
    let out = csap(&["attn-sim", "--input-size", "64"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("--input-size 128"), "{err}");
}
