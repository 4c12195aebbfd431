//! The `clustertrace` command.
//!
//! Every subcommand writes one flat run directory: named CSV/JSON artifacts
//! plus `manifest.json`. Progress goes to the log on stderr and a single
//! summary line goes to stdout. Exit status is 0 on success, 1 on input
//! errors and 2 on usage or configuration errors.

mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::aggregate::{
    self, event_cdfs, exec_time_cdf, execution_samples, moving_average, observation_report, queue_series,
    running_series, scheduling_samples, weighted_cdfs, write_cdf_csv, write_json, write_series_csv, Cdf, CurveMeta,
    ReportConfig, Scan, Scanner, SeriesPoint, DEFAULT_MA_WINDOW,
};
use crate::error::{Error, Result};
use crate::ingest::{
    codec, open_input, stream_task_events, BundlePaths, Diagnostics, ExternalSorter, KeyGrouper, Layouts,
    SnapshotSeeder, SynthConfig, TraceBundle,
};
use crate::lifecycle::{extract_spans, span_record, violation_records, Lifecycle, SPAN_HEADER, VIOLATION_HEADER};
use crate::model::{Micros, Resource, TaskEvent, TierBands, MICROS_PER_SECOND};
use crate::sim::{Policy, Replay, SimOptions, SimReport};
use crate::utilization::{change_distribution, task_attributes, ChangeConfig, ChangeMode, Pooling, Scope, UsageView};

pub use manifest::{digest, OutputFile, RunDir, RunManifest, MANIFEST_FILE};

#[derive(Debug, Parser)]
#[command(name = "clustertrace", version, about = "Cluster trace analytics and reservation-policy simulation")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Write row-level input diagnostics here instead of stderr.
    #[arg(long, global = true, value_name = "PATH")]
    pub diagnostics: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse every table and check task lifecycles.
    Validate(TraceArgs),
    /// Per-task spans and transition violations.
    Lifecycle(TraceArgs),
    /// Event CDFs, queue and running series, moving averages.
    Aggregate(AggregateArgs),
    /// Usage series by tier and the usage-change distribution.
    Utilization(UtilizationArgs),
    /// Replay usage under one or more reservation policies.
    Simulate(SimulateArgs),
    /// Generate a seeded synthetic trace.
    Synth(SynthArgs),
    /// Observation summary as JSON.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TraceArgs {
    /// Trace directory holding task_events, task_usage and machine_events.
    #[arg(long, value_name = "DIR")]
    pub trace: PathBuf,

    /// Run directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Column-map file for non-default layouts.
    #[arg(long, value_name = "FILE")]
    pub layout: Option<PathBuf>,

    /// Events held in memory by the sort and grouping stages before they
    /// spill to disk.
    #[arg(long, value_name = "EVENTS", default_value_t = 4_000_000)]
    pub memory_budget: usize,

    /// Give tasks already alive at trace start implied submit/schedule
    /// events.
    #[arg(long)]
    pub seed_snapshot: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub trace: TraceArgs,

    /// Moving-average window in seconds.
    #[arg(long, value_name = "SECONDS", default_value_t = (DEFAULT_MA_WINDOW / MICROS_PER_SECOND) as f64)]
    pub ma_window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingArg {
    Machine,
    Task,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct UtilizationArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub trace: TraceArgs,

    /// Sampling period in seconds.
    #[arg(long, value_name = "SECONDS", default_value_t = 300.0)]
    pub period: f64,

    #[arg(long, value_enum, default_value_t = ModeArg::Relative)]
    pub mode: ModeArg,

    #[arg(long, value_enum, default_value_t = PoolingArg::Machine)]
    pub pooling: PoolingArg,

    /// Drop period pairs where tasks start or stop.
    #[arg(long)]
    pub exclude_churn: bool,

    /// Highest priority of the gratis tier.
    #[arg(long, default_value_t = 1)]
    pub gratis_max: u8,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub trace: TraceArgs,

    /// Policy file; repeatable. Each may hold one policy or a `[[policy]]`
    /// list. Without any, a request-static, decay and q=0.9 margin policy
    /// are compared.
    #[arg(long, value_name = "FILE")]
    pub policy: Vec<PathBuf>,

    /// Override every policy's sampling period, in seconds.
    #[arg(long, value_name = "SECONDS")]
    pub period: Option<f64>,

    #[arg(long, default_value_t = 1)]
    pub gratis_max: u8,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Generator config; defaults are used when absent.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub trace: TraceArgs,

    /// Report config (lump period and threshold, window, tail fraction).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() || matches!(e, Error::Resolution(_)) {
        2
    } else {
        1
    }
}

/// Parses `argv` and runs the subcommand. Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("clustertrace: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command and returns the stdout summary line.
pub fn execute(cli: &Cli) -> Result<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    pool.install(|| {
        let mut ctx = Context {
            workers,
            diagnostics: Diagnostics::default(),
        };
        let summary = match &cli.command {
            Command::Validate(a) => validate(&mut ctx, a),
            Command::Lifecycle(a) => lifecycle(&mut ctx, a),
            Command::Aggregate(a) => aggregate(&mut ctx, a),
            Command::Utilization(a) => utilization(&mut ctx, a),
            Command::Simulate(a) => simulate(&mut ctx, a),
            Command::Synth(a) => synth(&mut ctx, a),
            Command::Report(a) => report(&mut ctx, a),
        }?;
        emit_diagnostics(&ctx.diagnostics, cli.diagnostics.as_deref())?;
        Ok(summary)
    })
}

fn emit_diagnostics(diagnostics: &Diagnostics, path: Option<&Path>) -> Result<()> {
    let text = diagnostics.render();
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            std::io::stderr().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

struct Context {
    workers: usize,
    diagnostics: Diagnostics,
}

impl Context {
    fn manifest(&self, subcommand: &str, inputs: Vec<PathBuf>, parameters: impl Serialize, mode: &str) -> Result<RunManifest> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            inputs,
            parameters: serde_json::to_value(parameters)?,
            seeds: Vec::new(),
            mode: mode.into(),
            workers: self.workers,
            outputs: Vec::new(),
        })
    }
}

fn seconds(s: f64, what: &str) -> Result<Micros> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Config(format!("{what} must be a positive number of seconds, got {s}")));
    }
    Ok((s * MICROS_PER_SECOND as f64).round() as Micros)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Input tables and layouts for a trace directory.
struct Trace {
    paths: BundlePaths,
    layouts: Layouts,
}

impl Trace {
    fn open(args: &TraceArgs) -> Result<Trace> {
        let layouts = match &args.layout {
            Some(p) => Layouts::from_toml(&read_text(p)?)?,
            None => Layouts::default(),
        };
        let paths = BundlePaths::from_dir(&args.trace)?;
        if paths.task_events.is_empty() {
            return Err(Error::InvalidInput(format!("no task_events table under {}", args.trace.display())));
        }
        Ok(Trace { paths, layouts })
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.paths.all().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
struct StreamStats {
    events: u64,
    spilled_runs: usize,
    snapshot_seeded: u64,
    last_time: Micros,
}

/// Streams task events in sorted order through `f`, spilling to disk past
/// the memory budget.
fn for_each_event(
    trace: &Trace,
    args: &TraceArgs,
    diagnostics: &mut Diagnostics,
    mut f: impl FnMut(TaskEvent) -> Result<()>,
) -> Result<StreamStats> {
    let mut sorter = ExternalSorter::new(args.memory_budget);
    for row in stream_task_events(&trace.paths.task_events, &trace.layouts.task_events, diagnostics) {
        sorter.push(row?)?;
    }
    let sorted = sorter.finish()?;
    let mut stats = StreamStats {
        events: sorted.total(),
        spilled_runs: sorted.spilled_runs(),
        ..StreamStats::default()
    };
    log::info!("sorted {} events ({} spilled runs)", stats.events, stats.spilled_runs);
    let mut failure = None;
    let ok = sorted.map_while(|r| r.map_err(|e| failure = Some(e)).ok());
    if args.seed_snapshot {
        let mut seeder = SnapshotSeeder::new(ok);
        for e in seeder.by_ref() {
            stats.last_time = e.time;
            f(e)?;
        }
        stats.snapshot_seeded = seeder.affected();
    } else {
        for e in ok {
            stats.last_time = e.time;
            f(e)?;
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(stats),
    }
}

/// Streams sorted events grouped per task, in key order.
fn for_each_lifecycle(
    trace: &Trace,
    args: &TraceArgs,
    diagnostics: &mut Diagnostics,
    mut f: impl FnMut(Lifecycle) -> Result<()>,
) -> Result<StreamStats> {
    let mut grouper = KeyGrouper::new(args.memory_budget, 64);
    let stats = for_each_event(trace, args, diagnostics, |e| grouper.push(e))?;
    for group in grouper.finish()? {
        let (key, events) = group?;
        f(Lifecycle::new(key, events))?;
    }
    Ok(stats)
}

fn scan_trace(trace: &Trace, args: &TraceArgs, diagnostics: &mut Diagnostics) -> Result<(Scan, StreamStats)> {
    let mut scanner = Scanner::new();
    let stats = for_each_event(trace, args, diagnostics, |e| scanner.push(&e))?;
    Ok((scanner.finish(), stats))
}

fn load_bundle(trace: &Trace, args: &TraceArgs, diagnostics: &mut Diagnostics) -> Result<TraceBundle> {
    let bundle = TraceBundle::load(&trace.paths, &trace.layouts, diagnostics)?;
    if !args.seed_snapshot {
        return Ok(bundle);
    }
    let events = SnapshotSeeder::new(bundle.task_events.into_iter()).collect();
    Ok(TraceBundle::new(events, bundle.usage, bundle.machines))
}

/// Counts parseable rows of a table, recording the rest as diagnostics.
fn check_table<T, I>(
    paths: &[PathBuf],
    diagnostics: &mut Diagnostics,
    read: impl Fn(Box<dyn std::io::Read + Send>) -> I,
) -> Result<u64>
where
    I: Iterator<Item = Result<T>>,
{
    let mut rows = 0;
    for path in paths {
        for row in read(open_input(path)?) {
            match row {
                Ok(_) => rows += 1,
                Err(Error::Parse { line, message }) => diagnostics.push(path.display().to_string(), line, message),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Default, Serialize)]
struct LifecycleSummary {
    tasks: u64,
    valid_tasks: u64,
    violations: u64,
    spans: u64,
    live_spans: u64,
    terminals: std::collections::BTreeMap<&'static str, u64>,
}

impl LifecycleSummary {
    fn add(&mut self, life: &Lifecycle, spans: &[crate::lifecycle::ScheduleSpan]) {
        self.tasks += 1;
        self.valid_tasks += life.is_valid() as u64;
        self.violations += life.violations.len() as u64;
        self.spans += spans.len() as u64;
        self.live_spans += spans.iter().filter(|s| s.live).count() as u64;
        for t in spans.iter().filter_map(|s| s.terminal) {
            *self.terminals.entry(t.name()).or_default() += 1;
        }
    }
}

type CsvFile = csv::Writer<std::io::BufWriter<std::fs::File>>;

fn csv_file(run: &mut RunDir, name: &str, header: &[&str]) -> Result<CsvFile> {
    let mut w = csv::Writer::from_writer(run.file(name)?);
    w.write_record(header)?;
    Ok(w)
}

fn close_csv(run: &RunDir, name: &str, w: CsvFile) -> Result<()> {
    let inner = w.into_inner().map_err(|e| Error::from(e.into_error()))?;
    run.close(name, inner)
}

fn validate(ctx: &mut Context, args: &TraceArgs) -> Result<String> {
    let trace = Trace::open(args)?;
    let mut run = RunDir::create(&args.out)?;
    let mut summary = LifecycleSummary::default();
    let mut violations = csv_file(&mut run, "violations.csv", &VIOLATION_HEADER)?;
    let stats = for_each_lifecycle(&trace, args, &mut ctx.diagnostics, |life| {
        summary.add(&life, &[]);
        for r in violation_records(&life) {
            violations.write_record(&r)?;
        }
        Ok(())
    })?;
    close_csv(&run, "violations.csv", violations)?;
    let usage_rows = check_table(&trace.paths.usage, &mut ctx.diagnostics, |r| {
        codec::read_usage(r, &trace.layouts.task_usage)
    })?;
    let machine_rows = check_table(&trace.paths.machine_events, &mut ctx.diagnostics, |r| {
        codec::read_machine_events(r, &trace.layouts.machine_events)
    })?;

    let mut w = csv_file(&mut run, "diagnostics.csv", &["source", "line", "message"])?;
    for d in &ctx.diagnostics.entries {
        w.write_record([d.source.as_str(), &d.line.to_string(), d.message.as_str()])?;
    }
    close_csv(&run, "diagnostics.csv", w)?;

    #[derive(Serialize)]
    struct Validation<'a> {
        task_events: u64,
        usage_rows: u64,
        machine_rows: u64,
        parse_errors: usize,
        stream: StreamStats,
        lifecycles: &'a LifecycleSummary,
    }
    let parse_errors = ctx.diagnostics.len();
    let report = Validation {
        task_events: stats.events,
        usage_rows,
        machine_rows,
        parse_errors,
        stream: stats,
        lifecycles: &summary,
    };
    let w = write_json(run.file("validation.json")?, &report)?;
    run.close("validation.json", w)?;
    let manifest = ctx.manifest("validate", trace.inputs(), args, "streaming")?;
    run.finish(manifest)?;
    Ok(format!(
        "validate: {} events, {} tasks, {} violations, {} parse errors -> {}",
        stats.events,
        summary.tasks,
        summary.violations,
        parse_errors,
        args.out.display()
    ))
}

fn lifecycle(ctx: &mut Context, args: &TraceArgs) -> Result<String> {
    let trace = Trace::open(args)?;
    let mut run = RunDir::create(&args.out)?;
    let mut summary = LifecycleSummary::default();
    let mut spans_out = csv_file(&mut run, "spans.csv", &SPAN_HEADER)?;
    let mut violations = csv_file(&mut run, "violations.csv", &VIOLATION_HEADER)?;
    let stats = for_each_lifecycle(&trace, args, &mut ctx.diagnostics, |life| {
        let spans = extract_spans(&life, Micros::MAX);
        summary.add(&life, &spans);
        for s in &spans {
            spans_out.write_record(span_record(life.key, s))?;
        }
        for r in violation_records(&life) {
            violations.write_record(&r)?;
        }
        Ok(())
    })?;
    close_csv(&run, "spans.csv", spans_out)?;
    close_csv(&run, "violations.csv", violations)?;

    #[derive(Serialize)]
    struct Out<'a> {
        stream: StreamStats,
        lifecycles: &'a LifecycleSummary,
    }
    let out = Out {
        stream: stats,
        lifecycles: &summary,
    };
    let w = write_json(run.file("lifecycle.json")?, &out)?;
    run.close("lifecycle.json", w)?;
    let manifest = ctx.manifest("lifecycle", trace.inputs(), args, "streaming")?;
    run.finish(manifest)?;
    Ok(format!(
        "lifecycle: {} tasks, {} spans, {} violations -> {}",
        summary.tasks,
        summary.spans,
        summary.violations,
        args.out.display()
    ))
}

fn cdf_artifact(run: &mut RunDir, metas: &mut Vec<(String, CurveMeta)>, name: &str, value: &str, cdf: &Cdf, meta: CurveMeta) -> Result<()> {
    let file = format!("{name}.csv");
    let w = write_cdf_csv(run.file(&file)?, "time", value, cdf)?;
    run.close(&file, w)?;
    let mut meta = meta;
    meta.points = cdf.points.len();
    meta.total = Some(cdf.total);
    meta.empty = cdf.is_empty();
    metas.push((file, meta));
    Ok(())
}

fn series_artifact(
    run: &mut RunDir,
    metas: &mut Vec<(String, CurveMeta)>,
    name: &str,
    value: &str,
    points: &[SeriesPoint],
    meta: CurveMeta,
) -> Result<()> {
    let file = format!("{name}.csv");
    let w = write_series_csv(run.file(&file)?, "time", value, points)?;
    run.close(&file, w)?;
    let mut meta = meta;
    meta.points = points.len();
    meta.empty = points.is_empty();
    metas.push((file, meta));
    Ok(())
}

fn aggregate(ctx: &mut Context, args: &AggregateArgs) -> Result<String> {
    let trace = Trace::open(&args.trace)?;
    let window = seconds(args.ma_window, "moving-average window")?;
    let (scan, stats) = scan_trace(&trace, &args.trace, &mut ctx.diagnostics)?;
    let mut run = RunDir::create(&args.trace.out)?;
    let mut metas = Vec::new();

    let cdfs = event_cdfs(&scan.timeline);
    let m = |curve: &str| CurveMeta::new(curve, "time_us", "fraction");
    cdf_artifact(&mut run, &mut metas, "cdf_new_submission", "fraction", &cdfs.new_submission, m("new_submission"))?;
    cdf_artifact(&mut run, &mut metas, "cdf_completion", "fraction", &cdfs.completion, m("completion"))?;
    cdf_artifact(&mut run, &mut metas, "cdf_submission", "fraction", &cdfs.submission, m("submission"))?;
    cdf_artifact(&mut run, &mut metas, "cdf_scheduling", "fraction", &cdfs.scheduling, m("scheduling"))?;
    match weighted_cdfs(&cdfs) {
        Ok(w) => {
            let wm = |curve: &str, weight: f64| {
                CurveMeta::new(curve, "time_us", "weighted_fraction")
                    .param("weight", weight)
                    .param("reference", "new_submission")
            };
            cdf_artifact(&mut run, &mut metas, "wcdf_completion", "weighted_fraction", &w.completion, wm("weighted_completion", w.completion_weight))?;
            cdf_artifact(&mut run, &mut metas, "wcdf_submission", "weighted_fraction", &w.submission, wm("weighted_submission", w.submission_weight))?;
            cdf_artifact(&mut run, &mut metas, "wcdf_scheduling", "weighted_fraction", &w.scheduling, wm("weighted_scheduling", w.scheduling_weight))?;
        }
        Err(Error::UndefinedWeight(why)) => log::warn!("weighted CDFs skipped: {why}"),
        Err(e) => return Err(e),
    }

    let queue = queue_series(&scan.timeline);
    let running = running_series(&scan.timeline);
    let sm = |curve: &str, negative: bool| CurveMeta::new(curve, "time_us", "tasks").param("negative", negative);
    series_artifact(&mut run, &mut metas, "queue", "tasks", &queue.points, sm("queue", queue.negative))?;
    series_artifact(&mut run, &mut metas, "running", "tasks", &running.points, sm("running", running.negative))?;

    let spans = scan.spans.iter().map(|(_, s)| s);
    let exec_ma = moving_average(&execution_samples(spans.clone()), window)?;
    let sched_ma = moving_average(&scheduling_samples(spans.clone()), window)?;
    let mm = |curve: &str, stamp: &str| {
        CurveMeta::new(curve, "time_us", "mean_us")
            .param("window_us", window)
            .param("stamped_at", stamp)
    };
    series_artifact(&mut run, &mut metas, "ma_execution", "mean_us", &exec_ma, mm("execution_time_moving_average", "end_time"))?;
    series_artifact(&mut run, &mut metas, "ma_scheduling", "mean_us", &sched_ma, mm("scheduling_time_moving_average", "schedule_time"))?;

    let exec = exec_time_cdf(spans, true);
    let file = "exec_time_cdf.csv";
    let w = write_cdf_csv(run.file(file)?, "execution_time_us", "fraction", &exec)?;
    run.close(file, w)?;
    let mut em = CurveMeta::new("execution_time", "execution_time_us", "fraction").param("finished_only", true);
    em.points = exec.points.len();
    em.total = Some(exec.total);
    em.empty = exec.is_empty();
    metas.push((file.into(), em));

    #[derive(Serialize)]
    struct Out {
        totals: aggregate::EventTotals,
        distinct_tasks: u64,
        completed_tasks: u64,
        violations: u64,
        stream: StreamStats,
        curves: std::collections::BTreeMap<String, CurveMeta>,
    }
    let out = Out {
        totals: cdfs.totals,
        distinct_tasks: scan.distinct_tasks,
        completed_tasks: scan.completed_tasks,
        violations: scan.violations,
        stream: stats,
        curves: metas.into_iter().collect(),
    };
    let w = write_json(run.file("aggregate.json")?, &out)?;
    run.close("aggregate.json", w)?;
    let manifest = ctx.manifest("aggregate", trace.inputs(), args, "streaming")?;
    run.finish(manifest)?;
    Ok(format!(
        "aggregate: {} events, {} new submissions, {} completions -> {}",
        stats.events,
        cdfs.totals.new_submissions,
        cdfs.totals.completions,
        args.trace.out.display()
    ))
}

fn utilization(ctx: &mut Context, args: &UtilizationArgs) -> Result<String> {
    let trace = Trace::open(&args.trace)?;
    let period = seconds(args.period, "period")?;
    let bands = TierBands::new(args.gratis_max)?;
    let bundle = load_bundle(&trace, &args.trace, &mut ctx.diagnostics)?;
    let attributes = task_attributes(&bundle.task_events);
    let view = UsageView {
        usage: &bundle.usage,
        attributes: &attributes,
        bands,
        capacity: (bundle.machine_capacity.cpu, bundle.machine_capacity.memory),
    };
    let scan = aggregate::scan(&bundle.task_events)?;
    let trace_end = bundle.trace_end();
    let config = ChangeConfig {
        period,
        mode: match args.mode {
            ModeArg::Relative => ChangeMode::Relative,
            ModeArg::Absolute => ChangeMode::Absolute,
        },
        pooling: match args.pooling {
            PoolingArg::Machine => Pooling::Machine,
            PoolingArg::Task => Pooling::Task,
        },
        exclude_churn: args.exclude_churn,
    };
    let mut run = RunDir::create(&args.trace.out)?;
    let mut warnings = Vec::new();
    let mut quantiles = std::collections::BTreeMap::new();
    for r in Resource::ALL {
        let breakdown = view.tier_breakdown(r, period)?;
        let allocated = view.allocation_series(&scan.spans, Scope::Cluster, r, period, trace_end)?;
        warnings.extend(breakdown.cluster.warnings.iter().cloned());
        let file = format!("util_{}.csv", r.name());
        let mut c = csv_file(
            &mut run,
            &file,
            &["time", "production", "middle", "gratis", "unattributed", "cluster", "allocated", "capacity"],
        )?;
        let n = breakdown.cluster.points.len().max(allocated.points.len());
        let at = |s: &crate::utilization::UtilSeries, k: usize| s.points.get(k).map_or(0.0, |p| p.value);
        for k in 0..n {
            let mut row = vec![(k as Micros * period).to_string()];
            row.extend(breakdown.tiers.iter().map(|s| at(s, k).to_string()));
            row.push(at(&breakdown.cluster, k).to_string());
            row.push(at(&allocated, k).to_string());
            row.push(breakdown.cluster.capacity.to_string());
            c.write_record(&row)?;
        }
        close_csv(&run, &file, c)?;

        let file = format!("change_{}.csv", r.name());
        match change_distribution(&bundle.usage, r, &config) {
            Ok(d) => {
                let w = d.write_csv(run.file(&file)?)?;
                run.close(&file, w)?;
                quantiles.insert(r.name(), Some(d.quantile_table()));
            }
            Err(Error::InsufficientData(why)) => {
                log::warn!("{} change distribution skipped: {why}", r.name());
                quantiles.insert(r.name(), None);
            }
            Err(e) => return Err(e),
        }
    }
    warnings.dedup();
    for w in &warnings {
        log::warn!("{w}");
    }

    #[derive(Serialize)]
    struct Out<'a> {
        period: Micros,
        change: ChangeConfig,
        capacity: crate::ingest::Capacity,
        usage_samples: usize,
        change_quantiles: std::collections::BTreeMap<&'static str, Option<std::collections::BTreeMap<String, f64>>>,
        warnings: &'a [String],
    }
    let out = Out {
        period,
        change: config,
        capacity: bundle.machine_capacity,
        usage_samples: bundle.usage.len(),
        change_quantiles: quantiles,
        warnings: &warnings,
    };
    let w = write_json(run.file("utilization.json")?, &out)?;
    run.close("utilization.json", w)?;
    let manifest = ctx.manifest("utilization", trace.inputs(), args, "in_memory")?;
    run.finish(manifest)?;
    Ok(format!(
        "utilization: {} usage samples at {} s -> {}",
        bundle.usage.len(),
        args.period,
        args.trace.out.display()
    ))
}

fn default_policies() -> Vec<Policy> {
    vec![
        Policy::request_static().with_name("request_static"),
        Policy::borg_decay().with_name("borg_decay"),
        Policy::change_quantile(0.9).with_name("change_quantile_q90"),
    ]
}

fn simulate(ctx: &mut Context, args: &SimulateArgs) -> Result<String> {
    let trace = Trace::open(&args.trace)?;
    let mut policies = Vec::new();
    for p in &args.policy {
        policies.extend(Policy::list_from_toml(&read_text(p)?)?);
    }
    if policies.is_empty() {
        policies = default_policies();
    }
    if let Some(s) = args.period {
        seconds(s, "period")?;
        policies = policies.into_iter().map(|p| p.with_period(s)).collect();
    }
    for p in &policies {
        p.validate()?;
    }
    let options = SimOptions {
        bands: TierBands::new(args.gratis_max)?,
    };
    let bundle = load_bundle(&trace, &args.trace, &mut ctx.diagnostics)?;
    let mut run = RunDir::create(&args.trace.out)?;
    let mut replay = Replay::new(&bundle, options);
    let mut reports: Vec<(String, SimReport)> = Vec::new();
    for (i, policy) in policies.iter().enumerate() {
        log::info!("simulating {}", policy.describe());
        let out = replay.simulate(policy)?;
        let stem = format!("sim_{:02}", i + 1);
        let w = write_json(run.file(&format!("{stem}.json"))?, &out.report)?;
        run.close(&format!("{stem}.json"), w)?;
        let w = out.series.write_csv(run.file(&format!("{stem}_series.csv"))?)?;
        run.close(&format!("{stem}_series.csv"), w)?;
        reports.push((stem, out.report));
    }
    // stable, so equal totals keep the policy order
    reports.sort_by(|a, b| b.1.total_reclaimed().total_cmp(&a.1.total_reclaimed()));

    #[derive(Serialize)]
    struct Row<'a> {
        file: String,
        policy: &'a str,
        reclaimed: f64,
        violation_rate: crate::sim::PerResource<f64>,
        evictions_triggered: u64,
    }
    let rows: Vec<Row> = reports
        .iter()
        .map(|(stem, r)| Row {
            file: format!("{stem}.json"),
            policy: &r.policy,
            reclaimed: r.total_reclaimed(),
            violation_rate: r.violation_rate,
            evictions_triggered: r.evictions_triggered,
        })
        .collect();
    let w = write_json(run.file("comparison.json")?, &rows)?;
    run.close("comparison.json", w)?;

    #[derive(Serialize)]
    struct Params<'a> {
        #[serde(flatten)]
        args: &'a SimulateArgs,
        policies: &'a [Policy],
        options: SimOptions,
    }
    let params = Params {
        args,
        policies: &policies,
        options,
    };
    let manifest = ctx.manifest("simulate", trace.inputs(), params, "in_memory")?;
    run.finish(manifest)?;
    let best = rows.first().map(|r| r.policy).unwrap_or("none");
    Ok(format!(
        "simulate: {} policies, most reclaimed by {} -> {}",
        rows.len(),
        best,
        args.trace.out.display()
    ))
}

fn synth(ctx: &mut Context, args: &SynthArgs) -> Result<String> {
    let mut config = match &args.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let synthetic = crate::ingest::generate_synthetic(&config)?;
    let mut run = RunDir::create(&args.out)?;
    for path in synthetic.bundle.write_dir(run.path())? {
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            run.record(name);
        }
    }
    #[derive(Serialize)]
    struct Params<'a> {
        #[serde(flatten)]
        args: &'a SynthArgs,
        effective: &'a SynthConfig,
    }
    let inputs = args.config.iter().cloned().collect();
    let mut manifest = ctx.manifest("synth", inputs, Params { args, effective: &config }, "in_memory")?;
    manifest.seeds = vec![config.seed];
    run.finish(manifest)?;
    Ok(format!(
        "synth: {} events, {} usage samples (seed {}) -> {}",
        synthetic.bundle.task_events.len(),
        synthetic.bundle.usage.len(),
        config.seed,
        args.out.display()
    ))
}

fn report(ctx: &mut Context, args: &ReportArgs) -> Result<String> {
    let trace = Trace::open(&args.trace)?;
    let config: ReportConfig = match &args.config {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("report config: {e}")))?,
        None => ReportConfig::default(),
    };
    let (scan, stats) = scan_trace(&trace, &args.trace, &mut ctx.diagnostics)?;
    let report = observation_report(&scan, &config)?;
    let mut run = RunDir::create(&args.trace.out)?;
    let w = write_json(run.file("report.json")?, &report)?;
    run.close("report.json", w)?;
    #[derive(Serialize)]
    struct Params<'a> {
        #[serde(flatten)]
        args: &'a ReportArgs,
        effective: ReportConfig,
    }
    let mut inputs = trace.inputs();
    inputs.extend(args.config.iter().cloned());
    let manifest = ctx.manifest("report", inputs, Params { args, effective: config }, "streaming")?;
    run.finish(manifest)?;
    Ok(format!(
        "report: {} events, {} tasks -> {}",
        stats.events,
        scan.distinct_tasks,
        args.trace.out.display()
    ))
}
