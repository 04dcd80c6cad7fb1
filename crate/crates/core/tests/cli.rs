use std::fs;

use fairfl::cli::{fig1_path, fig2_path, read_records_csv, run_experiment, Emit, ExperimentSpec, ROUNDS_CSV, SUMMARY_JSON};
use fairfl::engine::{Scheme, SchemeKind};
use fairfl::par::Execution;
use fairfl::summary::summarize;
use fairfl::Error;

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 6\n[devices]\ncount = 4\n");
    let out = tmp.path().join("out");
    let res = run_experiment(&ExperimentSpec::new(&cfg, &out)).unwrap();
    assert!(out.join(ROUNDS_CSV).exists());
    for k in [SchemeKind::Proposed, SchemeKind::Benchmark] {
        assert!(fig1_path(&out, k).exists());
        assert!(fig2_path(&out, k).exists());
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_JSON)).unwrap()).unwrap();
    assert!(json["energy_std_reduction_percent"].is_number());
    assert_eq!(res.records.len(), 6 * 4 * 2);
    let fig1 = fs::read_to_string(fig1_path(&out, SchemeKind::Proposed)).unwrap();
    assert_eq!(fig1.lines().count(), 7);
}

#[test]
fn csv_round_trip_reproduces_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 5\n[devices]\ncount = 3\n");
    let out = tmp.path().join("out");
    let res = run_experiment(&ExperimentSpec::new(&cfg, &out)).unwrap();
    let back = read_records_csv(&out.join(ROUNDS_CSV)).unwrap();
    assert_eq!(back.len(), res.records.len());
    assert_eq!(summarize(&back).unwrap(), res.summary);
}

#[test]
fn reruns_and_execution_modes_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 8\nseed = 11\n");
    let mut outputs = Vec::new();
    for (name, exec) in [("a", Execution::Parallel), ("b", Execution::Parallel), ("c", Execution::Sequential)] {
        let mut spec = ExperimentSpec::new(&cfg, tmp.path().join(name));
        spec.execution = Some(exec);
        spec.emit = [Emit::RoundCsv].into_iter().collect();
        run_experiment(&spec).unwrap();
        outputs.push(fs::read(tmp.path().join(name).join(ROUNDS_CSV)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 50\n[devices]\ncount = 2\n");
    let mut spec = ExperimentSpec::new(&cfg, tmp.path().join("out"));
    spec.rounds = Some(3);
    spec.scheme = Some(Scheme::Benchmark);
    spec.emit = [Emit::SummaryJson].into_iter().collect();
    let res = run_experiment(&spec).unwrap();
    assert_eq!(res.records.len(), 3 * 2);
    assert!(res.records.iter().all(|r| r.scheme == SchemeKind::Benchmark));
    assert!(!tmp.path().join("out").join(ROUNDS_CSV).exists());
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[privacy]\nepsilon = 1.5\n");
    let err = run_experiment(&ExperimentSpec::new(&cfg, tmp.path().join("out"))).unwrap_err();
    assert!(matches!(err, Error::Config { ref field, .. } if field.contains("epsilon")), "{err}");
    let unknown = write_config(tmp.path(), "[radio]\nbogus = 1\n");
    assert!(run_experiment(&ExperimentSpec::new(&unknown, tmp.path().join("out"))).is_err());
}

#[test]
fn empty_emit_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 1\n");
    let mut spec = ExperimentSpec::new(&cfg, tmp.path().join("out"));
    spec.emit.clear();
    assert!(run_experiment(&spec).is_err());
}

#[test]
fn shipped_config_matches_builtin_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let file = fairfl::config::ConfigFile::parse(&fs::read_to_string(path).unwrap()).unwrap();
    let mut builtin = fairfl::config::ConfigFile::default();
    builtin.delay_bound_s = Some(fairfl::config::DEFAULT_DELAY_BOUND);
    assert_eq!(file, builtin);
}
