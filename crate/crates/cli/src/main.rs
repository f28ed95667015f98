//! `flarecast` command-line front end.

mod overrides;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use flarecast::eval::MetricAggregate;
use flarecast::ingest::{self, SynthConfig};
use flarecast::mvts::format_ratio;
use flarecast::pipeline::{self, ExperimentConfig, ExperimentReport, ReportFormat};
use flarecast::{iforest, BinaryTask};
use serde::Serialize;

use overrides::{apply_overrides, InputError};

#[derive(Parser, Debug)]
#[command(name = "flarecast", version, about = "Outlier-aware solar flare prediction on multivariate time series")]
struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "FLARECAST_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the configured data and print per-partition class counts.
    Validate(ExperimentArgs),
    /// Generate a synthetic dataset with planted outliers.
    Synth(SynthArgs),
    /// Score the non-flaring training instances and list flagged outliers.
    Detect(DetectArgs),
    /// Run the full contamination sweep and write the reports.
    Sweep(OutArgs),
    /// Exhaustive (C, gamma) search on a holdout of the training partition.
    Gridsearch(OutArgs),
    /// Re-emit report files from an existing report.json.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,

    /// Built-in configuration: experiment-a or experiment-b.
    #[arg(long)]
    preset: Option<String>,

    /// Override a config key, e.g. `--set n_trials=3` or `--set kernel.gamma=0.1`.
    /// Values are parsed as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// At most this many instances per flare class per partition.
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Args, Debug)]
struct OutArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,

    /// Output directory; receives detect.csv.
    #[arg(long)]
    out: PathBuf,

    /// Contamination rate; defaults to iforest.contamination from the config.
    #[arg(long)]
    contamination: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthetic data config (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Override a config key, e.g. `--set seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory; receives partition<k>/manifest.csv and outliers.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json, or a directory containing one.
    #[arg(long)]
    input: PathBuf,

    /// Output directory for the re-emitted files.
    #[arg(long)]
    out: PathBuf,

    /// Formats to write.
    #[arg(long, value_delimiter = ',', default_values = ["json", "csv"], value_parser = ["json", "csv"])]
    format: Vec<String>,
}

#[derive(Serialize)]
struct RunMeta<'a, C: Serialize> {
    tool_version: &'static str,
    command: &'a str,
    argv: Vec<String>,
    config: &'a C,
    seed: u64,
    threads: usize,
    started_at: String,
    finished_at: String,
}

fn write_run_meta<C: Serialize>(out: &Path, command: &str, config: &C, seed: u64, started_at: String) -> Result<()> {
    let meta = RunMeta {
        tool_version: pipeline::TOOL_VERSION,
        command,
        argv: std::env::args().collect(),
        config,
        seed,
        threads: rayon::current_num_threads(),
        started_at,
        finished_at: now(),
    };
    write_file(&out.join("run_meta.json"), &pipeline::to_json(&meta, "run_meta.json")?)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())).into())
}

/// Resolved config plus the directory that relative data paths refer to.
fn load_experiment(args: &ExperimentArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let (cfg, base) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = read_text(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| InputError(format!("{} is not valid JSON: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let context = path.display().to_string();
            // round-trip first so every declared key is present for --set
            let parsed: ExperimentConfig = apply_overrides(value, &[], &context)?;
            (apply_overrides(serde_json::to_value(&parsed)?, &args.overrides, &context)?, base)
        }
        (None, Some(name)) => {
            let preset = ExperimentConfig::preset(name)?;
            let value = serde_json::to_value(&preset)?;
            (apply_overrides::<ExperimentConfig>(value, &args.overrides, name)?, PathBuf::from("."))
        }
        (None, None) => return Err(InputError("either --config or --preset is required".into()).into()),
    };
    let mut cfg = cfg;
    if let Some(cap) = args.subsample {
        cfg.subsample = Some(cap);
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn validate(args: &ExperimentArgs) -> Result<()> {
    let (cfg, base) = load_experiment(args)?;
    let data = pipeline::load_data(&cfg, &base)?;
    let mut out = String::new();
    writeln!(out, "task {}", cfg.task)?;
    writeln!(out, "parameters {}", cfg.parameters.join(","))?;
    writeln!(out, "partition,role,X,M,C,B,N,X:N,XM:CBN")?;
    for p in cfg.partitions() {
        let part = data.partition(p);
        let counts = part.class_counts();
        let role = if p == cfg.train_partition { "train" } else { "test" };
        let ratio = |task: BinaryTask| part.imbalance_ratio(task).map(format_ratio).unwrap_or_else(|_| "-".into());
        write!(out, "{p},{role}")?;
        for class in flarecast::FlareClass::ALL {
            write!(out, ",{}", counts.get(&class).copied().unwrap_or(0))?;
        }
        writeln!(out, ",{},{}", ratio(BinaryTask::XVsN), ratio(BinaryTask::XmVsCbn))?;
    }
    print!("{out}");
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let started = now();
    let text = read_text(&args.config)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| InputError(format!("{} is not valid JSON: {e}", args.config.display())))?;
    let context = args.config.display().to_string();
    let parsed: SynthConfig = apply_overrides(value, &[], &context)?;
    let cfg: SynthConfig = apply_overrides(serde_json::to_value(&parsed)?, &args.overrides, &context)?;
    cfg.validate()?;
    let (data, truth) = ingest::generate_synthetic(&cfg)?;
    for p in data.partition_ids() {
        ingest::write_dataset(&data.partition(p), &args.out.join(format!("partition{p}")))?;
    }
    write_file(&args.out.join("outliers.json"), &pipeline::to_json(&truth, "outliers.json")?)?;
    write_run_meta(&args.out, "synth", &cfg, cfg.seed, started)?;
    log::info!("wrote {} instances ({} planted outliers) to {}", data.len(), truth.ids.len(), args.out.display());
    Ok(())
}

fn detect(args: &DetectArgs) -> Result<()> {
    let started = now();
    let (cfg, base) = load_experiment(&args.experiment)?;
    let r = args.contamination.unwrap_or(cfg.iforest.contamination);
    if !(0.0..=0.5).contains(&r) {
        return Err(InputError(format!("contamination {r} outside [0, 0.5]")).into());
    }
    let train = pipeline::load_partitions(&cfg, &base, &[cfg.train_partition])?
        .partition(cfg.train_partition)
        .filter_task(cfg.task);
    let scores = pipeline::score_negatives(&train, &cfg)?;
    let flagged = iforest::flag_outliers(&scores, r);
    let mut csv = String::from("instance_id,score,flagged\n");
    for (id, score) in iforest::rank_by_score(&scores) {
        writeln!(csv, "{id},{score},{}", flagged.contains(id))?;
    }
    write_file(&args.out.join("detect.csv"), &csv)?;
    write_run_meta(&args.out, "detect", &cfg, cfg.master_seed, started)?;
    log::info!("flagged {} of {} non-flaring instances at r={r}", flagged.len(), scores.len());
    Ok(())
}

fn sweep(args: &OutArgs) -> Result<()> {
    let started = now();
    let (cfg, base) = load_experiment(&args.experiment)?;
    let out = pipeline::run_sweep(&cfg, &base)?;
    let problems = pipeline::audit(&out.manifest);
    if !problems.is_empty() {
        anyhow::bail!("protocol audit failed:\n  {}", problems.join("\n  "));
    }
    pipeline::emit_report(&out.report, &args.out, &[ReportFormat::Json, ReportFormat::Csv])?;
    pipeline::emit_manifest(&out.manifest, &args.out)?;
    write_run_meta(&args.out, "sweep", &cfg, cfg.master_seed, started)?;
    log::info!("{}", summary(&out.report).trim_end());
    Ok(())
}

fn gridsearch(args: &OutArgs) -> Result<()> {
    let started = now();
    let (mut cfg, base) = load_experiment(&args.experiment)?;
    let spec = cfg.grid_search.clone().unwrap_or_default();
    // grid search always runs without outlier removal
    cfg.contamination_grid = vec![0.0];
    let ctx = pipeline::ExperimentContext::load(&cfg, &base)?;
    let result = pipeline::grid_search(&ctx, &spec)?;
    write_file(&args.out.join("gridsearch.json"), &pipeline::to_json(&result, "gridsearch.json")?)?;
    write_run_meta(&args.out, "gridsearch", &cfg, cfg.master_seed, started)?;
    println!("C={} gamma={} {:?}={}", result.c, result.gamma, spec.objective, result.objective);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let path = if args.input.is_dir() {
        args.input.join(pipeline::REPORT_JSON)
    } else {
        args.input.clone()
    };
    if !path.exists() {
        return Err(InputError(format!("{} does not exist", path.display())).into());
    }
    let report: ExperimentReport = pipeline::read_json(&path)?;
    let formats: Vec<ReportFormat> = args
        .format
        .iter()
        .map(|f| if f == "json" { ReportFormat::Json } else { ReportFormat::Csv })
        .collect();
    pipeline::emit_report(&report, &args.out, &formats)?;
    print!("{}", summary(&report));
    Ok(())
}

fn fmt_agg(a: &MetricAggregate) -> String {
    format!("{:.4} ({:.4})", a.mean, a.variance)
}

/// Mean (variance) per contamination rate and test partition.
fn summary(report: &ExperimentReport) -> String {
    let mut s = String::from("r\tpartition\tTSS\tHSS2\n");
    for c in &report.cells {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", c.contamination, c.test_partition, fmt_agg(&c.tss), fmt_agg(&c.hss2));
    }
    s
}

/// The cause chain on one line, skipping causes already spelled out by
/// the message before them.
fn render(err: &anyhow::Error) -> String {
    let mut text = String::new();
    let mut previous = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !previous.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
        previous = msg;
    }
    text
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<flarecast::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
    }
    2
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(InputError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect(a),
        Command::Sweep(a) => sweep(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
