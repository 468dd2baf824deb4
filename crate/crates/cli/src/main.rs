use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use qburst::budget::{parse_sources, write_budget_csv, ErrorCombination};
use qburst::config::{Mode, RunConfig};
use qburst::pipeline::{self, files, RunOutput};
use qburst::rates::write_xy_csv;
use qburst::{reference, Error};

/// Worker threads for trace-level parallelism; unset means one per core.
const WORKERS_ENV: &str = "QBURST_WORKERS";

#[derive(Parser)]
#[command(name = "qburst", version, about = "Radiation-burst detection in qubit readout streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate raw traces and the impact truth log.
    Simulate(RunArgs),
    /// Fit, filter and binarize a trace file.
    Discriminate(RunArgs),
    /// Scan binarized traces for zero runs.
    Trigger(RunArgs),
    /// Derive thresholds and apply the selection cuts.
    Select(RunArgs),
    /// Turn selected events into rates, or analyze the published runs.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        /// Fit the published rate table instead of a run directory.
        #[arg(long)]
        reference: bool,
    },
    /// Expected impact rate from a source-definition file.
    Budget(BudgetArgs),
    /// Every stage in one pass.
    Pipeline(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    Analyze,
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamArg {
    Iq,
    Binary,
}

/// Flags mirror the top-level config keys. `--config` wins over flags.
#[derive(Args, Default)]
struct RunArgs {
    /// TOML run configuration, applied over the flags.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_cycles: Option<u64>,
    #[arg(long)]
    trace_len: Option<usize>,
    #[arg(long)]
    stream: Option<StreamArg>,
    #[arg(long)]
    sampling_period_us: Option<f64>,
    #[arg(long)]
    impact_rate_hz: Option<f64>,
    #[arg(long)]
    n_consecutive: Option<usize>,
    #[arg(long)]
    noise_rate_target: Option<f64>,
    #[arg(long, short = 'i')]
    input: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    write_traces: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SiteArg {
    Surface,
    Underground,
}

#[derive(Args)]
struct BudgetArgs {
    /// Lines of `name, type, coefficient, coefficient_err, driver, driver_err`.
    #[arg(long, conflicts_with = "site", required_unless_present = "site")]
    sources: Option<PathBuf>,
    /// Built-in budget of one of the two labs.
    #[arg(long)]
    site: Option<SiteArg>,
    /// Add coefficient errors in quadrature instead of linearly.
    #[arg(long)]
    quadrature: bool,
    /// CSV destination; stdout if omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn flag_overrides(&self) -> Value {
        let mut top = Map::new();
        let mut put = |k: &str, v: Value| {
            top.insert(k.to_string(), v);
        };
        if let Some(m) = self.mode {
            put("mode", json!(match m {
                ModeArg::Simulate => "simulate",
                ModeArg::Analyze => "analyze",
                ModeArg::Pipeline => "pipeline",
            }));
        }
        if let Some(s) = self.stream {
            put("stream", json!(match s {
                StreamArg::Iq => "iq",
                StreamArg::Binary => "binary",
            }));
        }
        if let Some(v) = &self.label {
            put("label", json!(v));
        }
        if let Some(v) = self.seed {
            put("seed", json!(v));
        }
        if let Some(v) = self.n_cycles {
            put("n_cycles", json!(v));
        }
        if let Some(v) = self.trace_len {
            put("trace_len", json!(v));
        }
        if let Some(v) = self.sampling_period_us {
            put("sampling_period_us", json!(v));
        }
        if let Some(v) = &self.input {
            put("input", json!(v));
        }
        if let Some(v) = &self.output_dir {
            put("output_dir", json!(v));
        }
        if self.write_traces {
            put("write_traces", json!(true));
        }
        if let Some(v) = self.impact_rate_hz {
            put("environment", json!({ "impact_rate_hz": v }));
        }
        if let Some(v) = self.n_consecutive {
            put("trigger", json!({ "n_consecutive": v }));
        }
        if let Some(v) = self.noise_rate_target {
            put("selection", json!({ "noise_rate_target": v }));
        }
        Value::Object(top)
    }

    fn resolve(&self, mode: Option<Mode>) -> Result<RunConfig, Error> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        merge(&mut value, self.flag_overrides());
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut value, serde_json::to_value(file)?);
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(m) = mode {
            cfg.mode = m;
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

/// Deep merge: objects combine key by key, anything else is replaced.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn configure_workers() -> Result<(), Error> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn report(out: &RunOutput) {
    let r = &out.result;
    let t = &out.thresholds;
    println!(
        "{}: T_S = {} µs, P(g) = {:.4}, live {:.1} s over {} traces",
        r.label, r.sampling_period_us, r.p_ground, r.live_time_s, r.accepted_traces
    );
    println!(
        "cuts: N_signal >= {}, N_control in [{}, {}]; {} triggers, {} selected",
        t.n_signal_min,
        t.n_control_min,
        t.n_control_max,
        out.events.len(),
        r.n_selected
    );
    match r.rate.upper_limit {
        Some(ul) => println!("rate < {ul:.3e} /s (90% CL)"),
        None => println!("rate = {:.3e} ± {:.3e} /s", r.rate.value, r.rate.err),
    }
    if let Some(tr) = &out.truth {
        println!("truth: {} injected, {} matched", tr.injected, tr.matched);
    }
}

fn write_csv(path: &Path, f: impl FnOnce(&mut File) -> Result<(), Error>) -> Result<(), Error> {
    let mut file = File::create(path)?;
    f(&mut file)
}

fn reference_analysis(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let a = reference::efficiency_analysis()?;
    write_csv(&dir.join(files::PLOT_RATE), |f| {
        write_xy_csv(f, ["sampling_period_us", "rate", "rate_err"], &a.rate_points)
    })?;
    write_csv(&dir.join("plot_efficiency.csv"), |f| {
        write_xy_csv(f, ["expected_rate", "measured_rate", "rate_err"], &a.source_points)
    })?;
    pipeline::write_json(&dir.join("efficiency.json"), &a)?;
    let m = &a.rate_model;
    println!("rate = {:.4e} + {:.4e}·T_S /s (chi2/dof {:.2})", m.p0, m.p1, m.chi2 / m.dof as f64);
    println!(
        "efficiency at T_S = {} µs: {:.2} ± {:.2} %",
        a.target_period_us,
        100.0 * a.efficiency.p1,
        100.0 * a.efficiency.p1_err
    );
    Ok(())
}

fn budget(args: &BudgetArgs) -> Result<(), Error> {
    let entries = match (&args.sources, args.site) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_sources(BufReader::new(file))?
        }
        (None, Some(SiteArg::Surface)) => reference::surface_budget(),
        (None, Some(SiteArg::Underground)) => reference::underground_budget(),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let combine = if args.quadrature {
        ErrorCombination::Quadrature
    } else {
        ErrorCombination::Linear
    };
    let total = match &args.output {
        Some(path) => write_budget_csv(File::create(path)?, &entries, combine)?,
        None => write_budget_csv(io::stdout().lock(), &entries, combine)?,
    };
    let mut err = io::stderr().lock();
    writeln!(err, "total {:.2e} ± {:.1e} /s", total.rate, total.err)?;
    if total.upper_limits > 0.0 {
        writeln!(err, "plus upper limits summing to {:.1e} /s", total.upper_limits)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_workers()?;
    match cli.command {
        Command::Simulate(a) => {
            let cfg = a.resolve(Some(Mode::Simulate))?;
            pipeline::run_pipeline(&cfg)?;
            println!("{} traces written to {}", cfg.n_traces(), cfg.output_dir.display());
        }
        Command::Discriminate(a) => {
            let cfg = a.resolve(None)?;
            let input = cfg
                .input
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join(files::TRACES));
            pipeline::stage_discriminate(&input, &cfg, &cfg.output_dir).map_err(|e| e.in_stage("discriminate"))?;
        }
        Command::Trigger(a) => {
            let cfg = a.resolve(None)?;
            pipeline::stage_trigger(&cfg, &cfg.output_dir).map_err(|e| e.in_stage("trigger"))?;
        }
        Command::Select(a) => {
            let cfg = a.resolve(None)?;
            pipeline::stage_select(&cfg, &cfg.output_dir).map_err(|e| e.in_stage("select"))?;
        }
        Command::Analyze { run, reference } => {
            if reference {
                let dir = run.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
                return reference_analysis(&dir);
            }
            let cfg = run.resolve(None)?;
            let r = pipeline::stage_analyze(&cfg, &cfg.output_dir).map_err(|e| e.in_stage("analyze"))?;
            println!("{}: {} selected in {:.1} s", r.label, r.n_selected, r.live_time_s);
        }
        Command::Budget(a) => budget(&a)?,
        Command::Pipeline(a) => {
            let cfg = a.resolve(None)?;
            match pipeline::run_pipeline(&cfg)? {
                Some(out) => report(&out),
                None => println!("{} traces written to {}", cfg.n_traces(), cfg.output_dir.display()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qburst: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qburst::protocol::StreamMode;

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"x": 1, "env": {"rate": 0.0, "tau": 400.0}});
        merge(&mut a, json!({"env": {"rate": 0.5}, "y": true}));
        assert_eq!(a, json!({"x": 1, "y": true, "env": {"rate": 0.5, "tau": 400.0}}));
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\n[environment]\nimpact_rate_hz = 0.3\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            seed: Some(1),
            label: Some("flags".into()),
            impact_rate_hz: Some(0.1),
            sampling_period_us: Some(40.0),
            ..RunArgs::default()
        };
        let cfg = args.resolve(None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.label, "flags");
        assert_eq!(cfg.environment.impact_rate_hz, 0.3);
        assert!((cfg.sampling_period() - 40.0).abs() < 1e-12);
        assert_eq!(cfg.stream, StreamMode::Binary);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "sede = 9\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            ..RunArgs::default()
        };
        assert_eq!(args.resolve(None).unwrap_err().exit_code(), 2);
    }
}
