//! The binary end to end: exit codes, printed verdicts and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[architecture]
input_dim = 2
widths = [4, 1]

[smoothing]
epsilon = 0.5
bits = 1

[dynamics]
eta = 0.01
horizon = 0.1
stride = 5

[data]
samples = 16

[sweep]
epsilons = [1.0, 0.5, 0.25]
widths = [4, 8]

[output]
name = "small"
snapshots = true
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bitnet-mf"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn epsilon_out_of_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[smoothing]\nepsilon = 2.0\n");
    let o = run("verify", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("R5") && err.contains("epsilon"), "{err}");
    assert!(!dir.path().join("out").exists(), "no artifacts for a rejected config");
}

#[test]
fn unknown_key_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[smoothing]\nepsilon = 0.1\nepsiln = 0.2\n");
    let o = run("train", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("epsiln") && err.contains("line 3"), "{err}");
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("verify", &dir.path().join("absent.toml"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn zero_workers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = run("verify", &cfg, &dir.path().join("out"), &["--workers", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn verify_prints_suites_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run("verify", &cfg, &out, &[]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}\n{}", stderr(&o));
    let verdicts: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS ")).collect();
    assert_eq!(verdicts.len(), 10, "{text}");
    assert!(text.contains("finished with exit code 0"));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 10);
    assert!(out.join("results.csv").is_file());
}

#[test]
fn train_writes_snapshots_and_journal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut snaps: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("traj_"))
        .collect();
    snaps.sort();
    // two layers, snapshots at steps 0, 5 and 10
    assert_eq!(snaps.len(), 6, "{snaps:?}");
    assert!(snaps
        .iter()
        .all(|n| n.starts_with("traj_small-") && n.ends_with(".csv")));
    assert!(snaps.iter().any(|n| n.ends_with("_1_0.csv")));
    assert!(snaps.iter().any(|n| n.ends_with("_2_10.csv")));

    let journal = fs::read_to_string(out.join("run.jsonl")).unwrap();
    let events: Vec<&str> = journal.lines().collect();
    assert!(events.first().unwrap().contains("\"event\":\"start\""));
    assert!(events.last().unwrap().contains("\"event\":\"finish\""));
    assert!(events[0].contains("config_hash"));
}

#[test]
fn results_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for command in ["train", "sweep-eps", "sweep-width", "gradcheck"] {
        let a = dir.path().join(format!("{command}-1"));
        let b = dir.path().join(format!("{command}-4"));
        assert_eq!(
            run(command, &cfg, &a, &["--workers", "1"]).status.code(),
            Some(0),
            "{command}"
        );
        assert_eq!(
            run(command, &cfg, &b, &["--workers", "4"]).status.code(),
            Some(0),
            "{command}"
        );
        let first = fs::read(a.join("results.csv")).unwrap();
        assert!(!first.is_empty());
        assert_eq!(first, fs::read(b.join("results.csv")).unwrap(), "{command}");
    }
}
