//! `rramfit` command-line interface.
//!
//! Exit status: 0 on success, 1 on a domain error (JSON object on stderr),
//! 2 on a usage error.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rramfit::dataset::{generate_dataset, write_atomic, Dataset, GenerationConfig, ParamRanges};
use rramfit::estimator::{Connector, EstimateRequest, Estimator, Fixed, NearestNeighbor};
use rramfit::heuristics::run_pipeline;
use rramfit::ingest::{rolling_average, to_trace, RawCurve};
use rramfit::metrics::{extract_with, split_branches, trace_compliance};
use rramfit::model::simulate_sweep;
use rramfit::{devices, Error, IVTrace, ModelParams, NvmMetrics, PolarityOrder, Result, SweepSpec};
use serde::Serialize;

use crate::config::{read_json, CliConfig, CONFIG_ENV};

#[derive(Parser)]
#[command(name = "rramfit", version, about = "Stanford RRAM model simulation and parameter extraction")]
struct Cli {
    /// Run configuration JSON
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one bipolar sweep and write the trace CSV.
    Simulate(SimulateArgs),
    /// Extract switching metrics from a trace or digitized curve.
    Metrics(MetricsArgs),
    /// Generate a synthetic dataset directory.
    GenDataset(GenDatasetArgs),
    /// Produce an initial parameter estimate.
    Estimate(EstimateArgs),
    /// Run the full extraction pipeline.
    Fit(FitArgs),
    /// Split a trace into per-branch CSVs with a JSON manifest.
    PlotData(PlotDataArgs),
}

#[derive(Args, Default)]
struct SweepOverrides {
    /// Integration step (s)
    #[arg(long)]
    dt: Option<f64>,
    /// Compliance current (A)
    #[arg(long)]
    compliance: Option<f64>,
    /// Positive apex (V)
    #[arg(long)]
    v_max: Option<f64>,
    /// Negative apex (V)
    #[arg(long, allow_hyphen_values = true)]
    v_min: Option<f64>,
}

impl SweepOverrides {
    fn apply(&self, mut s: SweepSpec) -> SweepSpec {
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
        if let Some(icc) = self.compliance {
            s.i_compliance = icc;
        }
        if let Some(v) = self.v_max {
            s.v_max = v;
        }
        if let Some(v) = self.v_min {
            s.v_min = v;
        }
        s
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepOrder {
    PositiveFirst,
    NegativeFirst,
}

impl From<SweepOrder> for PolarityOrder {
    fn from(o: SweepOrder) -> Self {
        match o {
            SweepOrder::PositiveFirst => PolarityOrder::PositiveFirst,
            SweepOrder::NegativeFirst => PolarityOrder::NegativeFirst,
        }
    }
}

/// How to read an input curve. Files with a `t,v,i[,g]` header are traces;
/// `v,i[,branch]` files are digitized curves and get smoothed and ordered.
#[derive(Args)]
struct InputArgs {
    /// Rolling-average window for digitized input (odd)
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Branch order of unlabeled digitized points
    #[arg(long, value_enum, default_value = "positive-first")]
    sweep_order: SweepOrder,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model parameters JSON
    #[arg(long, conflicts_with = "device", required_unless_present = "device")]
    params: Option<PathBuf>,
    /// Built-in device (parameters and calibrated sweep)
    #[arg(long)]
    device: Option<String>,
    /// Oxide thickness (m)
    #[arg(long)]
    t_ox: Option<f64>,
    #[command(flatten)]
    sweep: SweepOverrides,
    /// Output CSV; stdout when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Trace or digitized CSV
    input: PathBuf,
    #[command(flatten)]
    input_args: InputArgs,
    /// Compliance current (A) used to detect clamped samples
    #[arg(long)]
    compliance: Option<f64>,
    /// Output JSON; stdout when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Records to keep
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sampling ranges JSON (overrides the config file)
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
    /// Store every accepted trace under traces/
    #[arg(long)]
    keep_traces: bool,
    /// Worker threads; all cores when omitted
    #[arg(long)]
    threads: Option<usize>,
    /// Attempt cap; 100 x n when omitted
    #[arg(long)]
    max_attempts: Option<usize>,
    #[command(flatten)]
    sweep: SweepOverrides,
}

#[derive(Args)]
struct EstimatorArgs {
    /// Dataset directory for the nearest-neighbor estimator
    #[arg(long, conflicts_with_all = ["connector", "initial"])]
    dataset: Option<PathBuf>,
    /// External estimator command line (JSON lines over stdio)
    #[arg(long, conflicts_with = "initial")]
    connector: Option<String>,
    /// Fixed initial parameters JSON
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Neighbors (overrides the config file)
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// EstimateRequest JSON
    #[arg(long, conflicts_with_all = ["metrics", "t_ox"])]
    request: Option<PathBuf>,
    /// Target metrics JSON
    #[arg(long, requires = "t_ox", required_unless_present = "request")]
    metrics: Option<PathBuf>,
    /// Oxide thickness (m)
    #[arg(long)]
    t_ox: Option<f64>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Output JSON; stdout when omitted
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Reference trace or digitized CSV
    #[arg(long, required_unless_present = "metrics")]
    trace: Option<PathBuf>,
    /// Reference metrics JSON; extracted from the trace when omitted
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Built-in device whose calibrated sweep replaces the configured one
    #[arg(long)]
    device: Option<String>,
    /// Oxide thickness (m); the sweep's value when omitted
    #[arg(long)]
    t_ox: Option<f64>,
    #[command(flatten)]
    input_args: InputArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Widen saturated search bounds toward their hard caps
    #[arg(long)]
    expand_bounds: bool,
    #[command(flatten)]
    sweep: SweepOverrides,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Trace or digitized CSV
    input: PathBuf,
    #[command(flatten)]
    input_args: InputArgs,
    /// Compliance current (A) for the metrics in the manifest
    #[arg(long)]
    compliance: Option<f64>,
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            let json = serde_json::to_string(&report).unwrap_or_else(|_| format!("{e}"));
            eprintln!("{json}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Metrics(a) => metrics(&cfg, a),
        Command::GenDataset(a) => gen_dataset(&cfg, a),
        Command::Estimate(a) => estimate(&cfg, a),
        Command::Fit(a) => fit(&cfg, a),
        Command::PlotData(a) => plot_data(&cfg, a),
    }
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_input(path: &Path, a: &InputArgs) -> Result<IVTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let header = text.lines().next().unwrap_or_default();
    if header.split(',').next().map(str::trim) == Some("t") {
        let trace = IVTrace::parse_csv(&text, path)?;
        trace.validate()?;
        return Ok(trace);
    }
    let raw = RawCurve::parse_csv(&text, path)?;
    to_trace(&rolling_average(&raw, a.window)?, a.sweep_order.into())
}

fn device(name: &str) -> Result<&'static devices::Device> {
    devices::by_name(name).ok_or_else(|| Error::InvalidConfig(format!("unknown device {name:?}")))
}

fn simulate(cfg: &CliConfig, a: SimulateArgs) -> Result<()> {
    let (params, base) = match (&a.params, &a.device) {
        (Some(p), _) => (read_json::<ModelParams>(p)?, cfg.pipeline.sweep),
        (None, Some(name)) => {
            let d = device(name)?;
            (d.params, d.sweep)
        }
        (None, None) => unreachable!("clap requires --params or --device"),
    };
    let mut sweep = a.sweep.apply(base);
    if let Some(t) = a.t_ox {
        sweep.t_ox = t;
    }
    sweep.validate()?;
    let trace = simulate_sweep(&params, &cfg.pipeline.constants, &sweep)?;
    emit(a.output.as_deref(), trace.to_csv().as_bytes())
}

fn compliance_for(trace: &IVTrace, explicit: Option<f64>) -> f64 {
    explicit.unwrap_or_else(|| trace_compliance(trace))
}

fn metrics(_cfg: &CliConfig, a: MetricsArgs) -> Result<()> {
    let trace = load_input(&a.input, &a.input_args)?;
    let m = extract_with(&trace, compliance_for(&trace, a.compliance))?.metrics;
    emit(a.output.as_deref(), &json(&m)?)
}

fn gen_dataset(cfg: &CliConfig, a: GenDatasetArgs) -> Result<()> {
    let ranges: ParamRanges = match &a.ranges {
        Some(p) => read_json(p)?,
        None => cfg.ranges,
    };
    let sweep = a.sweep.apply(cfg.pipeline.sweep);
    let mut gcfg = GenerationConfig::new(a.n, a.seed);
    gcfg.threads = a.threads;
    gcfg.keep_traces = a.keep_traces;
    gcfg.constants = cfg.pipeline.constants;
    gcfg.max_attempts = a.max_attempts;
    let generation = generate_dataset(&ranges, &sweep, &gcfg)?;
    let mut ds = Dataset::new(generation.records, sweep, cfg.pipeline.constants)?;
    let traces = generation.traces.as_deref();
    ds.save(&a.out, traces, Some(&ranges), Some(&generation.report))?;
    emit(None, &json(&generation.report)?)
}

/// Runs `f` with the estimator selected on the command line.
fn with_estimator<T>(
    cfg: &CliConfig,
    a: &EstimatorArgs,
    f: impl FnOnce(&dyn Estimator) -> Result<T>,
) -> Result<T> {
    if let Some(spec) = &a.connector {
        return f(&Connector::from_spec(spec)?);
    }
    if let Some(p) = &a.initial {
        return f(&Fixed(read_json(p)?));
    }
    let dir = a.dataset.as_ref().ok_or_else(|| {
        Error::InvalidConfig("choose an estimator: --dataset, --connector or --initial".into())
    })?;
    let dataset = Dataset::load(dir)?;
    f(&NearestNeighbor {
        dataset: &dataset,
        k: a.k.unwrap_or(cfg.k),
    })
}

fn estimate(cfg: &CliConfig, a: EstimateArgs) -> Result<()> {
    let request: EstimateRequest = match (&a.request, &a.metrics, a.t_ox) {
        (Some(p), _, _) => read_json(p)?,
        (None, Some(m), Some(t_ox)) => EstimateRequest {
            target_metrics: read_json(m)?,
            t_ox,
            trace_path: None,
        },
        _ => unreachable!("clap requires --request or --metrics with --t-ox"),
    };
    let response = with_estimator(cfg, &a.estimator, |e| e.estimate(&request))?;
    emit(a.output.as_deref(), &json(&response)?)
}

fn fit(cfg: &CliConfig, a: FitArgs) -> Result<()> {
    let mut pipeline = cfg.pipeline.clone();
    if let Some(name) = &a.device {
        pipeline.sweep = device(name)?.sweep;
    }
    pipeline.sweep = a.sweep.apply(pipeline.sweep);
    let t_ox = a.t_ox.unwrap_or(pipeline.sweep.t_ox);
    pipeline.expand_bounds |= a.expand_bounds;

    let trace = a
        .trace
        .as_deref()
        .map(|p| load_input(p, &a.input_args))
        .transpose()?;
    let reference: NvmMetrics = match (&a.metrics, &trace) {
        (Some(p), _) => read_json(p)?,
        (None, Some(tr)) => extract_with(tr, pipeline.sweep.i_compliance)?.metrics,
        (None, None) => unreachable!("clap requires --trace or --metrics"),
    };
    let request = EstimateRequest {
        target_metrics: reference,
        t_ox,
        trace_path: a.trace.as_ref().map(|p| p.display().to_string()),
    };
    let report = with_estimator(cfg, &a.estimator, |e| {
        run_pipeline(&request, trace.as_ref(), e, &pipeline)
    })?;

    let stage_dir = a.out.join("stages");
    create_dir(&stage_dir)?;
    let sweep = pipeline.sweep.with_t_ox(t_ox);
    for (k, stage) in report.stages.iter().enumerate() {
        let name = format!("{k:02}-{}-{}.csv", stage.stage.label(), stage.pass);
        let tr = simulate_sweep(&stage.params, &pipeline.constants, &sweep)?;
        write_atomic(&stage_dir.join(name), tr.to_csv().as_bytes())?;
    }
    write_atomic(&a.out.join("params.json"), &json(&report.final_params)?)?;
    write_atomic(&a.out.join("report.json"), &json(&report)?)
}

#[derive(Serialize)]
struct BranchFile {
    name: &'static str,
    file: String,
    points: usize,
}

#[derive(Serialize)]
struct Manifest {
    source: String,
    metrics: Option<NvmMetrics>,
    metrics_error: Option<String>,
    branches: Vec<BranchFile>,
}

fn plot_data(_cfg: &CliConfig, a: PlotDataArgs) -> Result<()> {
    let trace = load_input(&a.input, &a.input_args)?;
    let split = split_branches(&trace)?;
    create_dir(&a.out)?;
    let named = [
        ("positive-forward", &split.positive_forward),
        ("positive-return", &split.positive_return),
        ("negative-forward", &split.negative_forward),
        ("negative-return", &split.negative_return),
    ];
    let mut branches = Vec::new();
    for (name, b) in named {
        let mut csv = String::from("v,i\n");
        for (v, i) in b.voltage.iter().zip(&b.current) {
            csv.push_str(&format!("{v},{i}\n"));
        }
        let file = format!("{name}.csv");
        write_atomic(&a.out.join(&file), csv.as_bytes())?;
        branches.push(BranchFile {
            name,
            file,
            points: b.voltage.len(),
        });
    }
    let (metrics, metrics_error) = match extract_with(&trace, compliance_for(&trace, a.compliance)) {
        Ok(x) => (Some(x.metrics), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let manifest = Manifest {
        source: a.input.display().to_string(),
        metrics,
        metrics_error,
        branches,
    };
    write_atomic(&a.out.join("manifest.json"), &json(&manifest)?)
}
