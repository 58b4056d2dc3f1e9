use std::path::Path;
use std::process::{Command, Output};

const LQR: &str = r#"
[run]
iterations = 4
eval_interval = 2
eval_episodes = 3
checkpoint_interval = 2
threads = 1

[env]
kind = "lqr"
state_dim = 1
action_dim = 1
a = [0.95]
b = [1.0]
q = [1.0]
r = [0.5]
gamma = 0.99
init_mean = [0.0]
init_std = [1.0]
horizon = 40
state_limit = 10.0
action_limit = 5.0

[policy]
squash = false

[sampler]
workers = 4
noise_table_size = 50000

[critic]
hidden = [8, 8]
"#;

fn zoac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zoac")).args(args).output().unwrap()
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("lqr.toml");
    std::fs::write(&path, LQR).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_requires_seed_out_dir_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert!(!zoac(&["train", "--config", &config, "--out-dir", out]).status.success());
    assert!(!zoac(&["train", "--seed", "1", "--out-dir", out]).status.success());
    assert!(!zoac(&["train", "--seed", "1", "--config", &config]).status.success());
}

#[test]
fn train_then_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let summary = ok(&zoac(&[
        "train",
        "--config",
        &config,
        "--seed",
        "7",
        "--out-dir",
        run.to_str().unwrap(),
    ]));
    assert_eq!(summary["iterations"], 4);
    assert_eq!(summary["env_steps"], 4 * 4 * 10 * 16);
    for it in ["ckpt_000000.zoac", "ckpt_000002.zoac", "ckpt_000004.zoac"] {
        assert!(run.join("checkpoints").join(it).exists());
    }
    let saved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 7"));

    let ckpt = run.join("checkpoints/ckpt_000004.zoac");
    let eval = ok(&zoac(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "5"]));
    assert_eq!(eval["iteration"], 4);
    assert_eq!(eval["returns"].as_array().unwrap().len(), 5);
    let again = ok(&zoac(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "5"]));
    assert_eq!(eval, again);

    let csv = zoac(&["export-metrics", "--metrics", run.to_str().unwrap()]);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("iteration,env_steps,eval_mean_return"));
    assert!(lines[2].starts_with("2,1280,"));

    let jsonl = zoac(&["export-metrics", "--metrics", run.to_str().unwrap(), "--format", "jsonl"]);
    let text = String::from_utf8(jsonl.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn dotted_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let summary = ok(&zoac(&[
        "train",
        "--config",
        &config,
        "--seed",
        "1",
        "--out-dir",
        run.to_str().unwrap(),
        "--run.iterations",
        "1",
        "--sampler.rollout_length=5",
    ]));
    assert_eq!(summary["iterations"], 1);
    assert_eq!(summary["env_steps"], 4 * 5 * 16);

    let bad = zoac(&[
        "train",
        "--config",
        &config,
        "--seed",
        "1",
        "--out-dir",
        run.to_str().unwrap(),
        "--sampler.no_such_field",
        "3",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn invalid_config_exits_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let out = zoac(&[
        "train",
        "--config",
        &config,
        "--seed",
        "1",
        "--out-dir",
        run.to_str().unwrap(),
        "--critic.lambda",
        "2.0",
    ]);
    assert!(!out.status.success());
    assert!(!run.exists());
}

#[test]
fn resume_latest_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = dir.path().join("run");
    let run = run.to_str().unwrap();
    ok(&zoac(&["train", "--config", &config, "--seed", "2", "--out-dir", run, "--run.iterations", "2"]));
    let summary = ok(&zoac(&["train", "--config", &config, "--seed", "2", "--out-dir", run, "--resume-latest"]));
    assert_eq!(summary["iterations"], 4);

    let straight = dir.path().join("straight");
    let full = ok(&zoac(&["train", "--config", &config, "--seed", "2", "--out-dir", straight.to_str().unwrap()]));
    let a = std::fs::read(summary["final_checkpoint"].as_str().unwrap()).unwrap();
    let b = std::fs::read(full["final_checkpoint"].as_str().unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn variance_check_emits_a_report_within_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let report_path = dir.path().join("report.jsonl");
    let report = ok(&zoac(&[
        "variance-check",
        "--config",
        &config,
        "--estimator",
        "zoac",
        "--critic",
        "lqr-oracle",
        "--samples",
        "50",
        "--sampler.normalize_obs",
        "false",
        "--out",
        report_path.to_str().unwrap(),
    ]));
    assert_eq!(report["estimator"], "zoac");
    assert_eq!(report["samples"], 50);
    assert_eq!(report["within_bound"], true);
    assert!(report["empirical_variance"].as_f64().unwrap() >= 0.0);
    assert!(report_path.exists());

    let es = ok(&zoac(&["variance-check", "--config", &config, "--estimator", "es", "--samples", "20"]));
    assert_eq!(es["estimator"], "es");
}

#[test]
fn oracle_critic_needs_lqr() {
    let out = zoac(&[
        "variance-check",
        "--estimator",
        "zoac",
        "--critic",
        "lqr-oracle",
        "--samples",
        "5",
        "--sampler.noise_table_size",
        "10000",
    ]);
    assert!(!out.status.success());
}

#[test]
fn compare_estimators_sweeps_segment_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = zoac(&[
        "compare-estimators",
        "--config",
        &config,
        "--samples",
        "20",
        "--segments",
        "1,4,16",
        "--budget",
        "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let reports: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 4);
    let segments: Vec<u64> = reports[..3]
        .iter()
        .map(|r| r["params"]["segments_per_worker"].as_u64().unwrap())
        .collect();
    assert_eq!(segments, vec![1, 4, 16]);
    assert_eq!(reports[3]["estimator"], "es");

    let bad = zoac(&["compare-estimators", "--config", &config, "--segments", "3", "--budget", "32"]);
    assert!(!bad.status.success());
}

#[test]
fn eval_rejects_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.zoac");
    std::fs::write(&path, b"ZOACCKPT garbage").unwrap();
    let out = zoac(&["eval", "--checkpoint", path.to_str().unwrap()]);
    assert!(!out.status.success());
}
