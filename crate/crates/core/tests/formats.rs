//! File formats at the crate boundary: the checked-in fuzz corpus replays
//! through every parser, the shipped configs load, and written artifacts
//! read back exactly.

use std::fs;
use std::path::{Path, PathBuf};

use bitnet_mf::constraint::WeightMatrix;
use bitnet_mf::experiment::records::results_to_string;
use bitnet_mf::experiment::snapshot::snapshot_to_string;
use bitnet_mf::experiment::{
    load_config, parse_config, parse_results, parse_snapshot, read_snapshot, snapshot_file_name, write_snapshot,
    ExperimentKind,
};
use bitnet_mf::Error;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = repo_root().join("fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn config_corpus_replays() {
    let mut accepted = Vec::new();
    for (name, text) in corpus("config_parse") {
        match parse_config(&text) {
            Ok(cfg) => {
                let again = parse_config(&cfg.canonical_text()).unwrap();
                assert_eq!(again, cfg, "{name}");
                accepted.push(name);
            }
            Err(Error::ConfigParse { line, column, .. }) => assert!(line >= 1 && column >= 1, "{name}"),
            Err(Error::ConfigInvalid(_)) => {}
            Err(e) => panic!("{name}: unexpected error kind {e}"),
        }
    }
    for expected in ["empty.toml", "verify.toml", "train.toml", "gradcheck.toml"] {
        assert!(accepted.iter().any(|n| n == expected), "{expected} should parse");
    }
}

#[test]
fn config_corpus_rejections_are_specific() {
    let get = |name: &str| corpus("config_parse").into_iter().find(|(n, _)| n == name).unwrap().1;
    let msg = parse_config(&get("epsilon_out_of_range.toml")).unwrap_err().to_string();
    assert!(msg.contains("R5") && msg.contains("epsilon"), "{msg}");
    let msg = parse_config(&get("init_above_clamp.toml")).unwrap_err().to_string();
    assert!(msg.contains("R4"), "{msg}");
    match parse_config(&get("unknown_key.toml")).unwrap_err() {
        Error::ConfigParse { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("epsiln"), "{message}");
        }
        e => panic!("unexpected {e}"),
    }
    assert!(matches!(
        parse_config(&get("truncated.toml")),
        Err(Error::ConfigParse { .. })
    ));
}

#[test]
fn snapshot_corpus_replays() {
    let mut accepted = 0;
    for (name, text) in corpus("snapshot_parse") {
        if let Ok(w) = parse_snapshot(&text) {
            assert_eq!(parse_snapshot(&snapshot_to_string(&w)).unwrap(), w, "{name}");
            accepted += 1;
        }
    }
    assert_eq!(accepted, 3);
}

#[test]
fn results_corpus_replays() {
    let mut accepted = 0;
    for (name, text) in corpus("results_parse") {
        if let Ok(records) = parse_results(&text) {
            let written = results_to_string(&records).unwrap();
            assert_eq!(parse_results(&written).unwrap(), records, "{name}");
            accepted += 1;
        }
    }
    assert_eq!(accepted, 4);
}

#[test]
fn shipped_configs_load() {
    let dir = repo_root().join("configs");
    let kinds: Vec<ExperimentKind> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| load_config(e.unwrap().path()).unwrap().kind)
        .collect();
    for kind in [
        ExperimentKind::Verify,
        ExperimentKind::Train,
        ExperimentKind::SweepEps,
        ExperimentKind::SweepWidth,
        ExperimentKind::Gradcheck,
    ] {
        assert!(kinds.contains(&kind), "no shipped config for {}", kind.as_str());
    }
}

#[test]
fn missing_config_file_is_io_error() {
    assert!(matches!(
        load_config(repo_root().join("configs/does-not-exist.toml")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn snapshot_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = WeightMatrix::from_rows(2, 3, vec![0.1, -0.2, 1.0 / 3.0, 5e-324, -1.0, 0.0]).unwrap();
    let path = write_snapshot(dir.path(), "run-abc", 2, 40, &w).unwrap();
    assert_eq!(
        path.file_name().unwrap().to_str().unwrap(),
        snapshot_file_name("run-abc", 2, 40)
    );
    assert_eq!(path.file_name().unwrap().to_str().unwrap(), "traj_run-abc_2_40.csv");
    assert_eq!(read_snapshot(&path).unwrap(), w);
}
