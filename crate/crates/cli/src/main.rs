//! `eagernet`: flow extraction, dataset preparation, training and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod manifest;
mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eagernet_core::dataset::{read_feature_csv, Dataset, PrepareOptions, SplitPart};
use eagernet_core::flowmeter::{extract, FlowLabels, FlowTableConfig, TimeoutMode, DEFAULT_TIMEOUT_SECS};
use eagernet_core::metrics::{default_grid, evaluate, layer_class_accuracy, threshold_sweep, EvalReport};
use eagernet_core::model::EagerNet;
use eagernet_core::trainer::{train_observed, TrainConfig};
use eagernet_core::{Error, ErrorClass};
use serde::Serialize;
use serde_json::json;

use manifest::Run;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e.class() {
            ErrorClass::Usage => CliError::Usage(e.to_string()),
            ErrorClass::Data => CliError::Data(e.to_string()),
            ErrorClass::Numeric => CliError::Numeric(e.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "eagernet", version, about = "Early-exit FCNN for network intrusion detection")]
struct Cli {
    /// Seed for shuffling, splitting and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel evaluation.
    #[arg(long, global = true, env = "EAGERNET_THREADS")]
    threads: Option<usize>,

    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate a packet-record CSV into per-flow feature rows.
    Extract(ExtractArgs),
    /// Deduplicate, split and normalize a feature CSV into a dataset bundle.
    Prepare(PrepareArgs),
    /// Train an EagerNet from a dataset bundle.
    Train(TrainArgs),
    /// Last-head metrics on the test split.
    Eval(EvalArgs),
    /// Early-exit accuracy and mean exit layer over a threshold grid.
    Sweep(SweepArgs),
    /// Per-head, per-class accuracy on the test split.
    Matrix(MatrixArgs),
    /// Gradient checks and inference invariants on a fresh build.
    Selfcheck,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Idle timeout in seconds.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    timeout: f64,
    /// Label sidecar: src_ip,src_port,dst_ip,dst_port,protocol,label,family.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Measure the timeout from a flow's first packet instead of its last.
    #[arg(long)]
    lifetime: bool,
    /// Accept packets up to this many seconds older than the newest seen.
    #[arg(long, default_value_t = 0.0)]
    reorder_tolerance: f64,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep class proportions equal across splits.
    #[arg(long)]
    stratify: bool,
    /// Fraction of the training rows held out for validation.
    #[arg(long, default_value_t = 0.0)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML or JSON file with TrainConfig fields.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Average {
    Macro,
    Micro,
    Weighted,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Averaging reported as the headline multiclass F1.
    #[arg(long, value_enum, default_value_t = Average::Macro)]
    average: Average,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of evenly spaced thresholds from the confidence floor to 1.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

struct Ctx {
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn cmd_extract(ctx: &Ctx, a: &ExtractArgs) -> CliResult {
    let mut run = Run::new("extract");
    let config = FlowTableConfig {
        timeout: a.timeout,
        mode: if a.lifetime { TimeoutMode::Lifetime } else { TimeoutMode::Idle },
        reorder_tolerance: a.reorder_tolerance,
    };
    let packets = run.read(&a.input)?;
    let labels = match &a.labels {
        Some(p) => Some(FlowLabels::read(run.read(p)?.as_slice())?),
        None => None,
    };
    let mut out = Vec::new();
    let report = extract(packets.as_slice(), &mut out, config, labels.as_ref())?;
    run.write(&a.out, &out)?;
    for r in report.rejected.iter().take(10) {
        ctx.note(format!("skipped line {}: {}", r.line, r.reason));
    }
    if report.rejected.len() > 10 {
        ctx.note(format!("... {} more rows skipped", report.rejected.len() - 10));
    }
    ctx.note(format!(
        "{} packets -> {} flows ({} rows skipped, {} flows unlabeled)",
        report.packets,
        report.flows,
        report.rejected.len(),
        report.unlabeled_flows
    ));
    run.finish(
        &a.out,
        to_value(&config),
        None,
        json!({
            "packets": report.packets,
            "flows": report.flows,
            "rejected_rows": report.rejected.len(),
            "unlabeled_flows": report.unlabeled_flows,
        }),
    )
}

fn cmd_prepare(ctx: &Ctx, a: &PrepareArgs) -> CliResult {
    let mut run = Run::new("prepare");
    let options = PrepareOptions {
        seed: ctx.seed.unwrap_or(1),
        stratify: a.stratify,
        val_fraction: a.val_fraction,
    };
    let bytes = run.read(&a.input)?;
    let (names, rows) = read_feature_csv(bytes.as_slice())?;
    let ds = Dataset::prepare(names, rows, options)?;
    let mut out = Vec::new();
    ds.write(&mut out)?;
    run.write(&a.out, &out)?;
    let count = |p| ds.indices(p).len();
    let summary = json!({
        "rows": ds.len(),
        "duplicates_removed": ds.duplicates_removed,
        "train": count(SplitPart::Train),
        "val": count(SplitPart::Val),
        "test": count(SplitPart::Test),
        "classes": ds.classes.names(),
    });
    ctx.note(format!(
        "{} rows ({} duplicates removed): train {}, val {}, test {}",
        ds.len(),
        ds.duplicates_removed,
        count(SplitPart::Train),
        count(SplitPart::Val),
        count(SplitPart::Test)
    ));
    run.finish(&a.out, to_value(&options), Some(options.seed), summary)
}

fn read_dataset(run: &mut Run, path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::read(run.read(path)?.as_slice())?)
}

fn parse_config(path: &Path, text: &str) -> CliResult<TrainConfig> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> CliResult {
    let mut run = Run::new("train");
    let text = String::from_utf8(run.read(&a.config)?)
        .map_err(|_| CliError::Usage(format!("config {} is not UTF-8", a.config.display())))?;
    let mut config = parse_config(&a.config, &text)?;
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ds = read_dataset(&mut run, &a.data)?;
    let train_set = ds.subset(SplitPart::Train);
    let monitor = ds.monitor_subset();
    if ds.indices(SplitPart::Val).is_empty() {
        ctx.note("no validation split in bundle; monitoring the test split");
    }
    let every = (config.epochs / 20).max(1);
    let (model, history) = train_observed(
        config.clone(),
        &train_set,
        &monitor,
        &ds.classes,
        &ds.normalization,
        |r, _| {
            if r.epoch % every == 0 || r.epoch == 1 {
                let accs: Vec<String> = r.head_accuracy.iter().map(|a| format!("{a:.4}")).collect();
                ctx.note(format!(
                    "epoch {:>4}  train {:.5}  val {:.5}  heads [{}]",
                    r.epoch,
                    r.train_loss,
                    r.val_loss,
                    accs.join(", ")
                ));
            }
        },
    )?;
    run.write(&a.out, &model.to_bytes()?)?;
    if let Some(h) = &a.history {
        run.write(h, history.to_csv().as_bytes())?;
    }
    ctx.note(format!(
        "best epoch {} of {}{}",
        history.best_epoch,
        history.epochs.len(),
        if history.stopped_early { " (stopped early)" } else { "" }
    ));
    let best = &history.epochs[history.best_epoch - 1];
    run.finish(
        &a.out,
        to_value(&config),
        Some(config.seed),
        json!({
            "epochs_run": history.epochs.len(),
            "best_epoch": history.best_epoch,
            "stopped_early": history.stopped_early,
            "best_val_loss": best.val_loss,
            "best_head_accuracy": best.head_accuracy,
            "parameters": model.param_count(),
        }),
    )
}

/// Load a model and bundle and make sure they belong together.
fn model_and_data(run: &mut Run, model: &Path, data: &Path) -> CliResult<(EagerNet, Dataset)> {
    let model = EagerNet::from_bytes(&run.read(model)?)?;
    let ds = read_dataset(run, data)?;
    if model.config.input_width != ds.input_width() {
        return Err(CliError::Data(format!(
            "model expects {} features, bundle has {}",
            model.config.input_width,
            ds.input_width()
        )));
    }
    if model.normalization != ds.normalization {
        return Err(CliError::Data(
            "model normalization differs from the bundle's; was it trained on this bundle?".into(),
        ));
    }
    if model.config.mode == eagernet_core::LabelMode::Multiclass && model.class_names != ds.classes.names() {
        return Err(CliError::Data(format!(
            "model classes {:?} differ from bundle classes {:?}",
            model.class_names,
            ds.classes.names()
        )));
    }
    Ok((model, ds))
}

#[derive(Serialize)]
struct EvalOutput {
    f1_average: &'static str,
    f1: f64,
    #[serde(flatten)]
    report: EvalReport,
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> CliResult {
    let mut run = Run::new("eval");
    let (model, ds) = model_and_data(&mut run, &a.model, &a.data)?;
    let report = evaluate(&model, &ds.subset(SplitPart::Test))?;
    let (name, f1) = match a.average {
        Average::Macro => ("macro", report.f1_macro),
        Average::Micro => ("micro", report.f1_micro),
        Average::Weighted => ("weighted", report.f1_weighted),
    };
    let last = report.head_accuracy.last().copied().unwrap_or(0.0);
    ctx.note(format!("{} test samples: last-head accuracy {last:.4}, {name} F1 {f1:.4}", report.samples));
    let out = EvalOutput {
        f1_average: name,
        f1,
        report,
    };
    let mut text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    run.write(&a.out, text.as_bytes())?;
    run.finish(&a.out, json!({ "average": name }), None, json!({ "accuracy": last, "f1": f1 }))
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> CliResult {
    if a.grid == 0 {
        return Err(CliError::Usage("--grid must be at least 1".into()));
    }
    let mut run = Run::new("sweep");
    let (model, ds) = model_and_data(&mut run, &a.model, &a.data)?;
    let grid = default_grid(&model, a.grid);
    let report = threshold_sweep(&model, &ds.subset(SplitPart::Test), &grid)?;
    run.write(&a.out, report.to_csv().as_bytes())?;
    let first = &report.points[0];
    let last = &report.points[report.points.len() - 1];
    ctx.note(format!(
        "{} thresholds over {} samples: accuracy {:.4} at mean exit {:.3} .. {:.4} at {:.3}",
        report.points.len(),
        report.samples,
        first.accuracy,
        first.mean_exit_layer,
        last.accuracy,
        last.mean_exit_layer
    ));
    run.finish(
        &a.out,
        json!({ "grid": a.grid }),
        None,
        json!({ "samples": report.samples, "provenance": report.provenance }),
    )
}

fn cmd_matrix(ctx: &Ctx, a: &MatrixArgs) -> CliResult {
    let mut run = Run::new("matrix");
    let (model, ds) = model_and_data(&mut run, &a.model, &a.data)?;
    let m = layer_class_accuracy(&model, &ds.subset(SplitPart::Test))?;
    run.write(&a.out, m.to_csv().as_bytes())?;
    ctx.note(format!("{} heads x {} classes", m.accuracy.len(), m.class_names.len()));
    run.finish(&a.out, json!({}), None, json!({ "support": m.support }))
}

fn cmd_selfcheck(ctx: &Ctx) -> CliResult {
    let results = selfcheck::run(ctx.seed.unwrap_or(1));
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        if !ctx.quiet || !r.passed {
            println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        }
    }
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} of {} self-checks failed", results.len())));
    }
    println!("selfcheck: all {} checks passed", results.len());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Prepare(a) => cmd_prepare(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Matrix(a) => cmd_matrix(&ctx, a),
        Command::Selfcheck => cmd_selfcheck(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eagernet: {e}");
            ExitCode::from(e.code())
        }
    }
}
