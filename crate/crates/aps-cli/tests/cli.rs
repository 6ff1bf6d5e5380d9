//! End-to-end checks of the binary over the sim backend.

use std::path::Path;
use std::process::{Command, Output};

fn aps() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aps"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
backend = "sim"

[sim]
topics = 3
train = 30
test = 6
sim_seed = 7

[pipeline]
c = 3
n_p = 2
m = 3
k = 2

[train]
epochs = 10
hidden = 16
"#,
    )
    .unwrap();
    path
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Second line of an artifact file parsed as JSON (line one is the header).
fn first_record(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    let line = text.lines().nth(1).unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn all_runs_the_chain_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .arg("all")
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));

    let text = stdout(&output);
    assert!(text.contains("stage cluster: ledger delta"));
    assert!(text.contains("stage forge: ledger delta"));
    assert!(text.contains("stage synth: ledger delta"));
    assert!(text.contains("stage train: ledger delta"));
    assert!(text.contains("aps-vote-2"));

    for file in [
        "cluster.jsonl",
        "prompts.jsonl",
        "synth.jsonl",
        "tuples.jsonl",
        "checkpoint.jsonl",
        "report-aps-vote-2.jsonl",
        "traces-aps-vote-2.jsonl",
        "config.resolved.toml",
    ] {
        assert!(artifacts.join(file).exists(), "missing {file}");
    }
}

#[test]
fn train_before_synth_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .arg("cluster")
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .arg("train")
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = stderr(&output);
    assert!(err.contains("forge") || err.contains("synth"), "stderr: {err}");
}

#[test]
fn vote_eval_uses_k_times_the_solver_budget() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let run = |args: &[&str]| {
        let output = aps()
            .args(["--config"])
            .arg(&config)
            .args(["--artifacts"])
            .arg(&artifacts)
            .args(args)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "args {args:?} stderr: {}",
            stderr(&output)
        );
        output
    };

    run(&["all"]);
    run(&["eval", "--mode", "aps-novote"]);
    run(&["eval", "--mode", "aps-vote-2"]);

    let novote = first_record(&artifacts.join("report-aps-novote.jsonl"));
    let vote = first_record(&artifacts.join("report-aps-vote-2.jsonl"));
    let novote_solve = novote["ledger"]["solve"].as_u64().unwrap();
    let vote_solve = vote["ledger"]["solve"].as_u64().unwrap();
    assert_eq!(vote_solve, 2 * novote_solve);
    assert_eq!(novote["n_evaluated"], vote["n_evaluated"]);
}

#[test]
fn limit_zero_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--limit", "0", "eval"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(stderr(&output).contains("empty evaluation"));
}

#[test]
fn answer_prints_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .arg("all")
        .output()
        .unwrap();
    assert!(output.status.success());

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .args(["answer", "--id", "0"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("\"example_id\": \"sim-test-0000\""));
    assert!(text.contains("\"ranked\""));
    assert!(text.contains("\"final_answer\""));
}

#[test]
fn ablate_toggles_produces_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .args(["ablate", "--sweep", "toggles"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("cluster="))
        .collect();
    assert_eq!(rows.len(), 4, "table:\n{text}");
    assert!(text.contains("cluster=on vote=on"));
    assert!(text.contains("cluster=off vote=off"));
}

#[test]
fn stale_artifacts_are_refused_after_seed_change() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let artifacts = dir.path().join("artifacts");

    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .arg("all")
        .output()
        .unwrap();
    assert!(output.status.success());

    // Same artifacts, different seed: the chain must refuse.
    let output = aps()
        .args(["--config"])
        .arg(&config)
        .args(["--artifacts"])
        .arg(&artifacts)
        .args(["--seed", "777", "eval", "--mode", "aps-novote"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(stderr(&output).contains("stale artifact"), "stderr: {}", stderr(&output));
}
