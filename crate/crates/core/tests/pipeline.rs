use std::fs;
use std::path::Path;

use qburst::config::{Mode, RunConfig};
use qburst::discrimination::MIN_FIT_RECORDS;
use qburst::pipeline::{
    files, run_in_memory, run_pipeline, stage_analyze, stage_discriminate, stage_select, stage_simulate,
    stage_trigger, Manifest,
};
use qburst::protocol::{RadiationEnvironment, StreamMode};

fn config(dir: &Path, stream: StreamMode, trace_len: usize, n_traces: u64) -> RunConfig {
    let mut cfg = RunConfig {
        label: "t".into(),
        seed: 42,
        trace_len,
        n_cycles: n_traces * trace_len as u64,
        stream,
        sampling_period_us: Some(40.0),
        environment: RadiationEnvironment::with_rate(2.0),
        output_dir: dir.to_path_buf(),
        write_traces: true,
        ..RunConfig::default()
    };
    cfg.resolve().unwrap();
    cfg
}

fn same_file(a: &Path, b: &Path, name: &str) {
    let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    assert!(x == y, "{name} differs between runs");
}

#[test]
fn in_memory_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), StreamMode::Binary, 100_000, 6);
    let a = run_in_memory(&cfg).unwrap();
    let b = run_in_memory(&cfg).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.events, b.events);
    assert!(!a.events.is_empty());
    let truth = a.truth.unwrap();
    assert!(truth.injected > 0);
    assert!(truth.matched <= truth.selected);
}

fn staged_equals_one_shot(stream: StreamMode, trace_len: usize, n_traces: u64) {
    let one = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();

    let cfg = config(one.path(), stream, trace_len, n_traces);
    let out = run_pipeline(&cfg).unwrap().unwrap();

    let scfg = config(staged.path(), stream, trace_len, n_traces);
    stage_simulate(&scfg, staged.path()).unwrap();
    stage_discriminate(&staged.path().join(files::TRACES), &scfg, staged.path()).unwrap();
    stage_trigger(&scfg, staged.path()).unwrap();
    stage_select(&scfg, staged.path()).unwrap();
    let result = stage_analyze(&scfg, staged.path()).unwrap();

    assert_eq!(result, out.result);
    for name in [
        files::TRACES,
        files::TRUTH,
        files::BINARY,
        files::SUMMARY,
        files::TRIGGERED,
        files::EVENTS,
        files::THRESHOLDS,
        files::RESULTS,
        files::TRUTH_REPORT,
        files::PLOT_SIGNAL,
    ] {
        same_file(one.path(), staged.path(), name);
    }

    let m: Manifest = qburst::pipeline::read_json(&one.path().join(files::MANIFEST)).unwrap();
    assert!(m.complete);
    assert_eq!(m.config_sha256, cfg.digest());
    assert_eq!(m.stages_completed, ["simulate", "discriminate", "trigger", "select", "analyze"]);
}

#[test]
fn staged_binary_run_matches_one_shot() {
    staged_equals_one_shot(StreamMode::Binary, 50_000, 5);
}

#[test]
fn staged_iq_run_matches_one_shot() {
    staged_equals_one_shot(StreamMode::Iq, MIN_FIT_RECORDS, 2);
}

#[test]
fn analyze_mode_reads_a_trace_file() {
    let src = tempfile::tempdir().unwrap();
    let cfg = config(src.path(), StreamMode::Binary, 50_000, 4);
    let direct = run_pipeline(&cfg).unwrap().unwrap();

    let out = tempfile::tempdir().unwrap();
    let mut acfg = cfg.clone();
    acfg.mode = Mode::Analyze;
    acfg.input = Some(src.path().join(files::TRACES));
    acfg.output_dir = out.path().to_path_buf();
    acfg.validate().unwrap();
    let analyzed = run_pipeline(&acfg).unwrap().unwrap();
    assert_eq!(analyzed.result, direct.result);
    assert!(analyzed.truth.is_none());
}

#[test]
fn failed_run_leaves_incomplete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), StreamMode::Binary, 50_000, 2);
    // an impossible noise target cannot be met by any cut
    cfg.selection.noise_rate_target = 1e-300;
    assert!(run_pipeline(&cfg).is_err());
    let m: Manifest = qburst::pipeline::read_json(&dir.path().join(files::MANIFEST)).unwrap();
    assert!(!m.complete);
    assert!(m.error.is_some());
    assert!(m.stages_completed.contains(&"trigger".to_string()));
}
