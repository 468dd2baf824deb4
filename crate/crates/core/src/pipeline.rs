//! End-to-end run: simulate → discriminate → trigger → select → analyze.
//!
//! Each stage is available on its own (in memory or on persisted files)
//! and [`run_pipeline`] chains them, writing every intermediate artifact
//! plus a manifest into the output directory.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DiscriminationConfig, Mode, RunConfig};
use crate::discrimination::{discriminate, BinaryTrace, ClusterModel, Trace};
use crate::error::{Error, Result};
use crate::protocol::{Records, Simulator, StreamMode, TruthLog};
use crate::rates::{write_results_csv, write_xy_csv, FitPoint, RunResult};
use crate::selection::{compute_thresholds, select_events, RejectionStats, SelectionConfig, SelectionThresholds};
use crate::trigger::{scan_triggers, Disposition, EventRecord, TriggerConfig, TriggeredEvent};
use crate::tracefile::{period_ns, quantized_period_us, read_header, read_trace_file, Encoding, TraceWriter};

/// Bumped whenever a stage's output for a given input changes.
pub const STAGE_VERSIONS: [(&str, u32); 5] = [
    ("simulate", 1),
    ("discriminate", 1),
    ("trigger", 1),
    ("select", 1),
    ("analyze", 1),
];

pub mod files {
    pub const TRACES: &str = "traces.qrtrc";
    pub const TRUTH: &str = "truth.jsonl";
    pub const BINARY: &str = "binary.qrtrc";
    pub const SUMMARY: &str = "traces.jsonl";
    pub const TRIGGERED: &str = "triggered.jsonl";
    pub const EVENTS: &str = "events.jsonl";
    pub const THRESHOLDS: &str = "thresholds.json";
    pub const RESULTS: &str = "results.csv";
    pub const TRUTH_REPORT: &str = "truth_comparison.json";
    pub const PLOT_RATE: &str = "plot_rate_vs_ts.csv";
    pub const PLOT_SIGNAL: &str = "plot_signal_zeros.csv";
    pub const MANIFEST: &str = "manifest.json";
}

/// Per-trace bookkeeping written by the discrimination stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace: u64,
    pub records: u64,
    pub zeros: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ClusterModel>,
    /// Set when the trace could not be binarized; such traces have no
    /// segment in the binary file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceSummary {
    pub fn binarized(&self) -> bool {
        self.error.is_none()
    }
}

/// Binarizes one trace. Binary records pass through unchanged; I/Q
/// records are fitted, screened and thresholded.
pub fn discriminate_records(
    index: u64,
    records: Records,
    sampling_period_us: f64,
    cfg: &DiscriminationConfig,
) -> (Option<BinaryTrace>, TraceSummary) {
    let n = records.len() as u64;
    match records {
        Records::Binary(bits) => {
            let b = BinaryTrace::new(index, bits);
            let s = TraceSummary {
                trace: index,
                records: n,
                zeros: b.zeros() as u64,
                accepted: true,
                model: None,
                error: None,
            };
            (Some(b), s)
        }
        Records::Iq(iq) => {
            let trace = Trace {
                index,
                sampling_period_us,
                records: iq,
            };
            match discriminate(&trace, &cfg.fit_options(), cfg.max_leak) {
                Ok(d) => {
                    let s = TraceSummary {
                        trace: index,
                        records: n,
                        zeros: d.binary.zeros() as u64,
                        accepted: d.binary.accepted,
                        model: Some(d.model),
                        error: None,
                    };
                    (Some(d.binary), s)
                }
                Err(e) => (
                    None,
                    TraceSummary {
                        trace: index,
                        records: n,
                        zeros: 0,
                        accepted: false,
                        model: None,
                        error: Some(e.to_string()),
                    },
                ),
            }
        }
    }
}

/// Triggers of an accepted trace; rejected traces contribute none.
pub fn trigger_trace(binary: &BinaryTrace, cfg: &TriggerConfig) -> Result<Vec<TriggeredEvent>> {
    if !binary.accepted {
        return Ok(Vec::new());
    }
    scan_triggers(binary, cfg)
}

/// Zeros over records across accepted traces.
pub fn run_ground_fraction(summaries: &[TraceSummary]) -> Result<f64> {
    let (zeros, total) = summaries
        .iter()
        .filter(|s| s.accepted)
        .fold((0u64, 0u64), |(z, t), s| (z + s.zeros, t + s.records));
    if total == 0 {
        return Err(Error::degenerate("no accepted traces"));
    }
    Ok(zeros as f64 / total as f64)
}

pub fn select_stage(
    events: &mut [TriggeredEvent],
    summaries: &[TraceSummary],
    sampling_period_us: f64,
    trig: &TriggerConfig,
    sel: &SelectionConfig,
) -> Result<(SelectionThresholds, RejectionStats)> {
    let p_ground = run_ground_fraction(summaries)?;
    let thr = compute_thresholds(p_ground, sampling_period_us, trig, sel)?;
    let (_, stats) = select_events(events, &thr);
    Ok((thr, stats))
}

pub fn analyze_stage(
    label: &str,
    sampling_period_us: f64,
    summaries: &[TraceSummary],
    events: &[TriggeredEvent],
    thresholds: Option<SelectionThresholds>,
) -> Result<RunResult> {
    let accepted: Vec<&TraceSummary> = summaries.iter().filter(|s| s.accepted).collect();
    let live_records = accepted.iter().map(|s| s.records).sum();
    let n_selected = events
        .iter()
        .filter(|e| e.disposition == Disposition::Accepted)
        .count() as u64;
    RunResult::new(
        label,
        sampling_period_us,
        run_ground_fraction(summaries)?,
        accepted.len() as u64,
        live_records,
        n_selected,
        thresholds,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    /// Impacts injected during accepted traces.
    pub injected: u64,
    pub injected_rate_hz: f64,
    pub selected: u64,
    /// Selected events whose window overlaps an injected burst.
    pub matched: u64,
    /// Selected over injected.
    pub efficiency: Option<f64>,
}

pub fn compare_with_truth(
    truth: &TruthLog,
    summaries: &[TraceSummary],
    events: &[TriggeredEvent],
    trace_len: usize,
    trig: &TriggerConfig,
    live_time_s: f64,
) -> TruthComparison {
    let len = trace_len as u64;
    let accepted: std::collections::HashSet<u64> =
        summaries.iter().filter(|s| s.accepted).map(|s| s.trace).collect();
    let injected = truth
        .impacts
        .iter()
        .filter(|imp| accepted.contains(&(imp.first_cycle / len)))
        .count() as u64;
    let selected: Vec<&TriggeredEvent> = events
        .iter()
        .filter(|e| e.disposition == Disposition::Accepted)
        .collect();
    let matched = selected
        .iter()
        .filter(|e| {
            let t = e.trace * len + e.t as u64;
            let start = t.saturating_sub(trig.lead() as u64);
            let end = t + trig.signal_post as u64;
            truth.overlapping(start, end).next().is_some()
        })
        .count() as u64;
    TruthComparison {
        injected,
        injected_rate_hz: if live_time_s > 0.0 {
            injected as f64 / live_time_s
        } else {
            0.0
        },
        selected: selected.len() as u64,
        matched,
        efficiency: (injected > 0).then(|| selected.len() as f64 / injected as f64),
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub thresholds: SelectionThresholds,
    pub stats: RejectionStats,
    pub truth: Option<TruthComparison>,
    pub summaries: Vec<TraceSummary>,
    pub events: Vec<TriggeredEvent>,
}

struct TraceWork {
    records: Option<Records>,
    binary: Option<BinaryTrace>,
    summary: TraceSummary,
    events: Vec<TriggeredEvent>,
}

/// Optional streaming outputs fed trace by trace, in index order.
#[derive(Default)]
struct Sinks {
    raw: Option<TraceWriter<BufWriter<File>>>,
    binary: Option<TraceWriter<BufWriter<File>>>,
}

fn worker_batch() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads().max(1) * 2
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs discriminate + trigger over `n_traces` traces produced by `source`,
/// in parallel batches merged in index order.
fn process_traces<F>(
    n_traces: u64,
    source: F,
    sampling_period_us: f64,
    cfg: &RunConfig,
    sinks: &mut Sinks,
) -> Result<(Vec<TraceSummary>, Vec<TriggeredEvent>)>
where
    F: Fn(u64) -> Result<Records> + Sync,
{
    let keep_raw = sinks.raw.is_some();
    let work = |i: u64| -> Result<TraceWork> {
        let records = source(i)?;
        let raw = keep_raw.then(|| records.clone());
        let (binary, summary) = discriminate_records(i, records, sampling_period_us, &cfg.discrimination);
        let events = match &binary {
            Some(b) => trigger_trace(b, &cfg.trigger)?,
            None => Vec::new(),
        };
        Ok(TraceWork {
            records: raw,
            binary,
            summary,
            events,
        })
    };
    let mut summaries = Vec::with_capacity(n_traces as usize);
    let mut events = Vec::new();
    let batch = worker_batch() as u64;
    let mut start = 0;
    while start < n_traces {
        let end = (start + batch).min(n_traces);
        #[cfg(feature = "parallel")]
        let done: Vec<Result<TraceWork>> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(work).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let done: Vec<Result<TraceWork>> = (start..end).map(work).collect();
        for w in done {
            let w = w?;
            if let (Some(sink), Some(r)) = (sinks.raw.as_mut(), &w.records) {
                sink.write_records(r)?;
            }
            if let (Some(sink), Some(b)) = (sinks.binary.as_mut(), &w.binary) {
                sink.write_records(&Records::Binary(b.bits.clone()))?;
            }
            summaries.push(w.summary);
            events.extend(w.events);
        }
        start = end;
    }
    Ok((summaries, events))
}

fn simulator(cfg: &RunConfig) -> Result<Simulator> {
    Simulator::new(cfg.protocol, cfg.qubit, cfg.environment, cfg.stream, cfg.seed)?.with_trace_len(cfg.trace_len)
}

fn finish_run(
    cfg: &RunConfig,
    sampling_period_us: f64,
    summaries: Vec<TraceSummary>,
    mut events: Vec<TriggeredEvent>,
    truth: Option<&TruthLog>,
) -> Result<RunOutput> {
    let (thresholds, stats) = select_stage(&mut events, &summaries, sampling_period_us, &cfg.trigger, &cfg.selection)
        .map_err(|e| e.in_stage("select"))?;
    let result = analyze_stage(&cfg.label, sampling_period_us, &summaries, &events, Some(thresholds))
        .map_err(|e| e.in_stage("analyze"))?;
    let truth = truth.map(|t| compare_with_truth(t, &summaries, &events, cfg.trace_len, &cfg.trigger, result.live_time_s));
    Ok(RunOutput {
        result,
        thresholds,
        stats,
        truth,
        summaries,
        events,
    })
}

/// Simulates and analyses a run entirely in memory.
pub fn run_in_memory(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let sim = simulator(cfg)?;
    let ts = quantized_period_us(cfg.sampling_period())?;
    let n = cfg.n_traces();
    let (summaries, events) = process_traces(n, |i| Ok(sim.trace(i).records), ts, cfg, &mut Sinks::default())?;
    let truth = sim.truth_log(n * cfg.trace_len as u64);
    finish_run(cfg, ts, summaries, events, Some(&truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub mode: Mode,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub stage_versions: Vec<(String, u32)>,
    pub stages_completed: Vec<String>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_unix_s: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix_s: Option<u64>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Manifest {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            label: cfg.label.clone(),
            mode: cfg.mode,
            config_sha256: cfg.digest(),
            seed: cfg.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            stage_versions: STAGE_VERSIONS.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
            stages_completed: Vec::new(),
            complete: false,
            error: None,
            started_unix_s: unix_now(),
            finished_unix_s: None,
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(files::MANIFEST), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[TriggeredEvent]) -> Result<()> {
    write_jsonl(path, events.iter().map(EventRecord::from))
}

pub fn read_events(path: &Path, trig: &TriggerConfig) -> Result<Vec<TriggeredEvent>> {
    read_jsonl::<EventRecord>(path)?
        .into_iter()
        .map(|r| r.into_event(trig))
        .collect()
}

fn write_csv_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    f(BufWriter::new(File::create(path)?))
}

/// Histogram of signal-window zero counts over all triggers.
fn signal_zero_histogram(events: &[TriggeredEvent], trig: &TriggerConfig) -> Vec<FitPoint> {
    let mut counts = vec![0u64; trig.signal_len() + 1];
    for e in events {
        counts[e.n_signal] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| FitPoint {
            x: k as f64,
            y: c as f64,
            sigma: (c as f64).sqrt(),
        })
        .collect()
}

fn write_selection(dir: &Path, events: &[TriggeredEvent], thresholds: &SelectionThresholds) -> Result<()> {
    write_events(&dir.join(files::EVENTS), events)?;
    write_json(&dir.join(files::THRESHOLDS), thresholds)
}

fn write_analysis(
    dir: &Path,
    result: &RunResult,
    events: &[TriggeredEvent],
    truth: Option<&TruthComparison>,
    trig: &TriggerConfig,
) -> Result<()> {
    write_csv_file(&dir.join(files::RESULTS), |w| write_results_csv(w, std::slice::from_ref(result)))?;
    write_csv_file(&dir.join(files::PLOT_RATE), |w| {
        write_xy_csv(
            w,
            ["sampling_period_us", "rate", "rate_err"],
            &[FitPoint {
                x: result.sampling_period_us,
                y: result.rate.value,
                sigma: result.rate.err,
            }],
        )
    })?;
    write_csv_file(&dir.join(files::PLOT_SIGNAL), |w| {
        write_xy_csv(w, ["n_signal", "events", "err"], &signal_zero_histogram(events, trig))
    })?;
    if let Some(t) = truth {
        write_json(&dir.join(files::TRUTH_REPORT), t)?;
    }
    Ok(())
}

fn open_sink(path: &Path, ts: f64, encoding: Encoding, count: u64) -> Result<TraceWriter<BufWriter<File>>> {
    TraceWriter::new(BufWriter::new(File::create(path)?), period_ns(ts)?, encoding, count)
}

fn raw_encoding(cfg: &RunConfig) -> Encoding {
    match cfg.stream {
        StreamMode::Iq => Encoding::Iq,
        StreamMode::Binary => Encoding::Binary,
    }
}

/// One-shot run with every artifact persisted under `cfg.output_dir`.
/// Returns `None` in simulate mode, which stops after writing traces.
///
/// The manifest is written first with `complete = false` and rewritten as
/// stages finish, so a failed run leaves its artifacts flagged incomplete.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Option<RunOutput>> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new(cfg);
    manifest.save(dir)?;
    let outcome = execute(cfg, dir, &mut manifest);
    match &outcome {
        Ok(_) => manifest.complete = true,
        Err(e) => manifest.error = Some(e.to_string()),
    }
    manifest.finished_unix_s = Some(unix_now());
    manifest.save(dir)?;
    outcome
}

fn mark(manifest: &mut Manifest, dir: &Path, stage: &str) -> Result<()> {
    manifest.stages_completed.push(stage.to_string());
    manifest.save(dir)
}

type Source = Box<dyn Fn(u64) -> Result<Records> + Sync>;

fn file_source(path: &Path, trace_len: usize) -> Result<(u64, f64, Source)> {
    let file = read_trace_file(path)?;
    let n = file.len() as u64 / trace_len as u64;
    if n == 0 {
        return Err(Error::degenerate(format!(
            "{} holds fewer than {trace_len} records",
            path.display()
        )));
    }
    let ts = file.sampling_period_us();
    let f = move |i: u64| -> Result<Records> {
        let r = i as usize * trace_len..(i as usize + 1) * trace_len;
        Ok(match &file.records {
            Records::Iq(v) => Records::Iq(v[r].to_vec()),
            Records::Binary(v) => Records::Binary(v[r].to_vec()),
        })
    };
    Ok((n, ts, Box::new(f)))
}

fn execute(cfg: &RunConfig, dir: &Path, manifest: &mut Manifest) -> Result<Option<RunOutput>> {
    if cfg.mode == Mode::Simulate {
        stage_simulate(cfg, dir).map_err(|e| e.in_stage("simulate"))?;
        mark(manifest, dir, "simulate")?;
        return Ok(None);
    }
    let (n, ts, source, truth) = match cfg.mode {
        Mode::Analyze => {
            let input = cfg.input.as_deref().expect("validated");
            let (n, ts, source) = file_source(input, cfg.trace_len).map_err(|e| e.in_stage("discriminate"))?;
            (n, ts, source, None)
        }
        _ => {
            let sim = simulator(cfg)?;
            let n = cfg.n_traces();
            let truth = sim.truth_log(n * cfg.trace_len as u64);
            write_jsonl(&dir.join(files::TRUTH), &truth.impacts)?;
            let ts = quantized_period_us(cfg.sampling_period())?;
            let source: Source = Box::new(move |i| Ok(sim.trace(i).records));
            (n, ts, source, Some(truth))
        }
    };
    let mut sinks = Sinks::default();
    if cfg.mode == Mode::Pipeline && cfg.write_traces {
        sinks.raw = Some(open_sink(&dir.join(files::TRACES), ts, raw_encoding(cfg), n * cfg.trace_len as u64)?);
    }
    sinks.binary = Some(open_sink(&dir.join(files::BINARY), ts, Encoding::Binary, 0)?);
    let (summaries, events) =
        process_traces(n, source, ts, cfg, &mut sinks).map_err(|e| e.in_stage("discriminate"))?;
    if let Some(raw) = sinks.raw.take() {
        raw.finish()?;
        mark(manifest, dir, "simulate")?;
    }
    sinks.binary.take().expect("opened").finish_with_actual_count()?;
    write_jsonl(&dir.join(files::SUMMARY), &summaries)?;
    mark(manifest, dir, "discriminate")?;
    write_events(&dir.join(files::TRIGGERED), &events)?;
    mark(manifest, dir, "trigger")?;
    let out = finish_run(cfg, ts, summaries, events, truth.as_ref())?;
    write_selection(dir, &out.events, &out.thresholds)?;
    mark(manifest, dir, "select")?;
    write_analysis(dir, &out.result, &out.events, out.truth.as_ref(), &cfg.trigger)?;
    mark(manifest, dir, "analyze")?;
    Ok(Some(out))
}

/// Raw traces and the truth log.
pub fn stage_simulate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sim = simulator(cfg)?;
    let ts = quantized_period_us(cfg.sampling_period())?;
    let n = cfg.n_traces();
    write_jsonl(&dir.join(files::TRUTH), sim.truth_log(n * cfg.trace_len as u64).impacts)?;
    let mut w = open_sink(&dir.join(files::TRACES), ts, raw_encoding(cfg), n * cfg.trace_len as u64)?;
    for i in 0..n {
        w.write_records(&sim.trace(i).records)?;
    }
    w.finish()?;
    Ok(())
}

/// Trace file → binary readout and per-trace summary.
pub fn stage_discriminate(input: &Path, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (n, ts, source) = file_source(input, cfg.trace_len)?;
    let mut sinks = Sinks {
        raw: None,
        binary: Some(open_sink(&dir.join(files::BINARY), ts, Encoding::Binary, 0)?),
    };
    let mut summaries = Vec::with_capacity(n as usize);
    for i in 0..n {
        let (binary, summary) = discriminate_records(i, source(i)?, ts, &cfg.discrimination);
        if let (Some(sink), Some(b)) = (sinks.binary.as_mut(), &binary) {
            sink.write_records(&Records::Binary(b.bits.clone()))?;
        }
        summaries.push(summary);
    }
    sinks.binary.take().expect("opened").finish_with_actual_count()?;
    write_jsonl(&dir.join(files::SUMMARY), &summaries)
}

/// Binary readout + summary → triggered events.
pub fn stage_trigger(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let summaries: Vec<TraceSummary> = read_jsonl(&dir.join(files::SUMMARY))?;
    let file = read_trace_file(&dir.join(files::BINARY))?;
    let Records::Binary(bits) = file.records else {
        return Err(Error::format(20, "binary stage file must be bit-packed"));
    };
    let mut offset = 0usize;
    let mut events = Vec::new();
    for s in summaries.iter().filter(|s| s.binarized()) {
        let len = s.records as usize;
        let chunk = bits
            .get(offset..offset + len)
            .ok_or_else(|| Error::format(offset as u64, "binary file shorter than the trace summary"))?;
        offset += len;
        let mut b = BinaryTrace::new(s.trace, chunk.to_vec());
        b.accepted = s.accepted;
        events.extend(trigger_trace(&b, &cfg.trigger)?);
    }
    write_events(&dir.join(files::TRIGGERED), &events)
}

/// Triggered events → dispositions and thresholds.
pub fn stage_select(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let summaries: Vec<TraceSummary> = read_jsonl(&dir.join(files::SUMMARY))?;
    let mut events = read_events(&dir.join(files::TRIGGERED), &cfg.trigger)?;
    let ts = binary_period(dir)?;
    let (thr, _) = select_stage(&mut events, &summaries, ts, &cfg.trigger, &cfg.selection)?;
    write_selection(dir, &events, &thr)
}

/// Selected events → run result, plot data and (if present) truth comparison.
pub fn stage_analyze(cfg: &RunConfig, dir: &Path) -> Result<RunResult> {
    let summaries: Vec<TraceSummary> = read_jsonl(&dir.join(files::SUMMARY))?;
    let events = read_events(&dir.join(files::EVENTS), &cfg.trigger)?;
    let thr: SelectionThresholds = read_json(&dir.join(files::THRESHOLDS))?;
    let ts = binary_period(dir)?;
    let result = analyze_stage(&cfg.label, ts, &summaries, &events, Some(thr))?;
    let truth_path = dir.join(files::TRUTH);
    let truth = if truth_path.is_file() {
        let log = TruthLog {
            impacts: read_jsonl(&truth_path)?,
        };
        Some(compare_with_truth(&log, &summaries, &events, cfg.trace_len, &cfg.trigger, result.live_time_s))
    } else {
        None
    };
    write_analysis(dir, &result, &events, truth.as_ref(), &cfg.trigger)?;
    Ok(result)
}

fn binary_period(dir: &Path) -> Result<f64> {
    let header = read_header(&dir.join(files::BINARY))?;
    Ok(header.sampling_period_ns as f64 / 1e3)
}
