//! End-to-end checks of the `rosd` binary: gen-data, train, eval, plot.

use std::path::{Path, PathBuf};
use std::process::Command;

fn rosd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rosd"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn rosd");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_train_args(out_dir: &Path) -> Vec<String> {
    [
        "train",
        "--method",
        "rosd",
        "--reflector-mode",
        "oracle",
        "--steps",
        "3",
        "--batch-size",
        "2",
        "--group-size",
        "2",
        "--eval-every",
        "3",
        "--eval-samples",
        "1",
        "--eval-problems",
        "2",
        "--train-problems",
        "8",
        "--max-new-tokens",
        "12",
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--n-layers",
        "1",
        "--context-len",
        "256",
        "--checkpoint-every",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn gen_data_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("problems.jsonl");
    run_ok(rosd().args([
        "gen-data",
        "--family",
        "arith_chain",
        "--seed",
        "7",
        "--n",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
    let content = std::fs::read_to_string(&out).unwrap();
    assert_eq!(content.lines().count(), 5);
    assert!(content.contains("\"family\":\"ARITH_CHAIN\""));

    // Stdout mode and determinism.
    let a = run_ok(rosd().args(["gen-data", "--family", "string_transform", "--seed", "3", "--n", "2"]));
    let b = run_ok(rosd().args(["gen-data", "--family", "string_transform", "--seed", "3", "--n", "2"]));
    assert_eq!(a, b);
}

#[test]
fn unknown_family_fails_with_message() {
    let out = rosd()
        .args(["gen-data", "--family", "calculus", "--seed", "1", "--n", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown task family"));
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let stdout = run_ok(rosd().args(tiny_train_args(&run_dir)));
    assert!(stdout.contains("final_step"));
    assert!(run_dir.join("metrics.jsonl").exists());
    assert!(run_dir.join("config.snapshot").exists());
    assert!(run_dir.join("summary.json").exists());

    let ckpt = run_dir.join("checkpoints/step-3/model.ckpt");
    assert!(ckpt.exists());
    let eval_out = run_ok(rosd().args([
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--family",
        "arith_chain",
        "--n",
        "2",
        "--k",
        "1",
        "--max-new-tokens",
        "12",
    ]));
    assert!(eval_out.contains("mean_at_k"));

    let plot_dir = dir.path().join("plots");
    let plot_out = run_ok(rosd().args([
        "plot",
        "--runs",
        run_dir.to_str().unwrap(),
        "--metrics",
        "rollout_accuracy,mean_at_k:arith_chain",
        "--out",
        plot_dir.to_str().unwrap(),
    ]));
    assert!(plot_out.contains("rollout_accuracy.csv"));
    assert!(plot_dir.join("rollout_accuracy.svg").exists());
    assert!(plot_dir.join("mean_at_k_arith_chain.csv").exists());
}

#[test]
fn config_file_with_cli_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.kv");
    std::fs::write(
        &cfg_path,
        "method = grpo\nsteps = 5\nbatch_size = 2\ngroup_size = 2\n\
         eval_every = 5\neval_samples = 1\neval_problems = 2\ntrain_problems = 8\n\
         max_new_tokens = 12\nd_model = 16\nn_heads = 2\nn_layers = 1\n\
         context_len = 256\ncheckpoint_every = 5\n",
    )
    .unwrap();
    let run_dir: PathBuf = dir.path().join("run");
    // CLI --steps 2 overrides the file's 5.
    run_ok(rosd().args([
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--steps",
        "2",
        "--checkpoint-every",
        "2",
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]));
    let snapshot = std::fs::read_to_string(run_dir.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("\"steps\": 2"));
    assert!(snapshot.contains("\"method\": \"GRPO\""));

    // Unknown config keys are rejected.
    let bad = rosd()
        .args(["train", "--learning-rate", "1.0"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown config key"));
}
