//! End-to-end checks of the `spikeopt` binary: flag and environment
//! precedence, output files, report recomputation, and failure exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 9
out_dir = "{}"

[budget]
max_trials = 6
n_workers = 2

[scbo]
n_init = 3
n_cand = 40

[simulator]
frames = 30

[simulator.dataset]
kind = "synthetic"
classes = 2
side = 4
train = 8
valid = 6
test = 2

[simulator.fixed]
lambda_minus = 0.0005
lambda_plus = 0.008
map_size = 10
decoder = "max"
epochs = 1
exc_v_th = -55.0
exc_v_rest = -65.0
exc_t_ref = 5
exc_theta_plus = 0.05
exc_tau_theta = 1e7
exc_strength = 22.5
inh_v_th = -40.0
inh_v_rest = -60.0
inh_tau = 10.0
inh_t_ref = 2
inh_strength = 1.0

[[earlystop]]
layer = "excitatory"
min_spikes = 1
max_silent_share = 0.5

[[params]]
name = "exc_tau"
kind = "continuous"
lower = 50.0
upper = 200.0
sampler = "log-uniform"
group = "G1"

[[params]]
name = "weight_norm"
kind = "continuous"
lower = 2.0
upper = 8.0
sampler = "uniform"
group = "G5"
"#,
        out_dir.display()
    )
}

/// Invokes the binary with a scrubbed SPIKEOPT_ environment so test-runner
/// leftovers cannot leak into clap's env lookup.
fn spikeopt(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikeopt"));
    for var in [
        "SPIKEOPT_CONFIG",
        "SPIKEOPT_SEED",
        "SPIKEOPT_WORKERS",
        "SPIKEOPT_MAX_TRIALS",
        "SPIKEOPT_MAX_SECONDS",
        "SPIKEOPT_OUT",
        "SPIKEOPT_LOG",
    ] {
        cmd.env_remove(var);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("out");
    let path = dir.join("exp.toml");
    fs::write(&path, tiny_config(&out)).unwrap();
    (path, out)
}

fn log_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_writes_log_frozen_config_summary_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());

    let res = spikeopt(&["run", "--config", config.to_str().unwrap()], &[]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));

    for name in ["trials.jsonl", "config.toml", "summary.json", "best_so_far.csv", "intervals.csv"]
    {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let trials = log_lines(&out.join("trials.jsonl"));
    assert_eq!(trials.len(), 6);
    for t in &trials {
        assert!(t["objective"].is_number());
        assert!(t["violations"].is_array());
        assert!(t["stopped"].is_boolean());
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 6);
    let frac = summary["stopped_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());

    let res = spikeopt(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--max-trials",
            "2",
            "--seed",
            "123",
            "--workers",
            "1",
        ],
        &[],
    );
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));

    assert_eq!(log_lines(&out.join("trials.jsonl")).len(), 2);
    let frozen = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(frozen.contains("seed = 123"), "frozen: {frozen}");
    assert!(frozen.contains("max_trials = 2"), "frozen: {frozen}");
    assert!(frozen.contains("n_workers = 1"), "frozen: {frozen}");
}

#[test]
fn environment_variables_mirror_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());

    // Env alone applies.
    let res = spikeopt(
        &["run", "--config", config.to_str().unwrap()],
        &[("SPIKEOPT_MAX_TRIALS", "3"), ("SPIKEOPT_WORKERS", "1")],
    );
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(log_lines(&out.join("trials.jsonl")).len(), 3);

    // An explicit flag beats the same env var.
    let res = spikeopt(
        &["run", "--config", config.to_str().unwrap(), "--max-trials", "2"],
        &[("SPIKEOPT_MAX_TRIALS", "5"), ("SPIKEOPT_WORKERS", "1")],
    );
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(log_lines(&out.join("trials.jsonl")).len(), 2);
}

#[test]
fn report_recomputes_the_run_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());
    let res = spikeopt(&["run", "--config", config.to_str().unwrap()], &[]);
    assert!(res.status.success());

    let re = dir.path().join("re");
    let log = out.join("trials.jsonl");
    let res = spikeopt(
        &["report", "--log", log.to_str().unwrap(), "--out", re.to_str().unwrap()],
        &[],
    );
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));

    for name in ["summary.json", "best_so_far.csv", "intervals.csv"] {
        let a = fs::read(out.join(name)).unwrap();
        let b = fs::read(re.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between run and report");
    }
    // Stdout carries the same summary bytes.
    assert_eq!(res.stdout, fs::read(out.join("summary.json")).unwrap());
}

#[test]
fn corrupt_log_lines_warn_but_do_not_fail_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());
    let res = spikeopt(
        &["run", "--config", config.to_str().unwrap(), "--max-trials", "2", "--workers", "1"],
        &[],
    );
    assert!(res.status.success());

    let log = out.join("trials.jsonl");
    let mut text = fs::read_to_string(&log).unwrap();
    text.insert_str(0, "{{{ definitely not json\n");
    fs::write(&log, text).unwrap();

    let res = spikeopt(&["report", "--log", log.to_str().unwrap()], &[]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("corrupt line 1"), "stderr: {stderr}");
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(summary["trials"], 2);
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();

    // A config argument that is neither a file nor a bundled profile.
    let res = spikeopt(&["run", "--config", "no-such-profile"], &[]);
    assert!(!res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("no-such-profile"), "stderr: {stderr}");

    // An unknown key is named.
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, format!("{}\nwarp = 9\n", tiny_config(&dir.path().join("o")))).unwrap();
    let res = spikeopt(&["run", "--config", bad.to_str().unwrap()], &[]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warp"));

    // A missing bound names the parameter and the field.
    let nobound = tiny_config(&dir.path().join("o")).replace("upper = 200.0\n", "");
    fs::write(&bad, nobound).unwrap();
    let res = spikeopt(&["run", "--config", bad.to_str().unwrap()], &[]);
    assert!(!res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("exc_tau") && stderr.contains("upper"), "stderr: {stderr}");

    // No out_dir anywhere.
    let noout = tiny_config(&dir.path().join("o")).replace(
        &format!("out_dir = \"{}\"\n", dir.path().join("o").display()),
        "",
    );
    fs::write(&bad, noout).unwrap();
    let res = spikeopt(&["run", "--config", bad.to_str().unwrap()], &[]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("output directory"));

    // An empty log refuses to summarize.
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let res = spikeopt(&["report", "--log", empty.to_str().unwrap()], &[]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("no trial records"));

    // A missing log names its path.
    let res = spikeopt(&["report", "--log", "/definitely/absent.jsonl"], &[]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("absent.jsonl"));
}

#[test]
fn single_worker_reruns_from_the_frozen_config_reproduce_objectives() {
    let dir = tempfile::tempdir().unwrap();
    let (config, out) = write_config(dir.path());
    let res = spikeopt(
        &["run", "--config", config.to_str().unwrap(), "--workers", "1"],
        &[],
    );
    assert!(res.status.success());

    let out2 = dir.path().join("out2");
    let frozen = out.join("config.toml");
    let res = spikeopt(
        &[
            "run",
            "--config",
            frozen.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ],
        &[],
    );
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));

    let a = log_lines(&out.join("trials.jsonl"));
    let b = log_lines(&out2.join("trials.jsonl"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x["trial_id"], y["trial_id"]);
        assert_eq!(x["objective"], y["objective"]);
        assert_eq!(x["config"], y["config"]);
        assert_eq!(x["seed"], y["seed"]);
    }
}
