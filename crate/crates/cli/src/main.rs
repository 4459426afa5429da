//! `h2iad` — train, score and benchmark one-class anomaly detectors for
//! two-person 3D skeleton motion.
//!
//! Subcommands:
//! - `synth` writes a synthetic interaction dataset (JSONL)
//! - `train` fits a model on one normal category and writes a checkpoint
//!   plus a loss-history CSV
//! - `score` emits one `{index, category, score}` JSON object per sample
//! - `eval`  runs the per-category benchmark and writes JSON/text reports
//!
//! Every command is deterministic in (inputs, seed); artifacts carry no
//! timestamps, so reruns reproduce outputs byte for byte. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use h2iad_core::data::Scenario;
use h2iad_core::error::{Error, ErrorKind, Result};
use h2iad_core::eval::BenchmarkReport;
use h2iad_core::{
    distance_maps, load_dataset, resample_pair, run_benchmark, synth_generate, train_one_class,
    write_dataset, InteractionDataset, PeMode, TrainConfig,
};

// ── argument definitions ────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "h2iad",
    version,
    about = "One-class anomaly detection for two-person skeleton motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-person interaction dataset (JSONL).
    Synth(SynthArgs),
    /// Train on one normal category; write a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Score samples with a trained checkpoint (JSONL, input order).
    Score(ScoreArgs),
    /// Benchmark each category as the normal class; write reports.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset path (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Scenarios to include.
    #[arg(long, value_delimiter = ',', default_values_t = [
        String::from("handshake"), String::from("strike"),
        String::from("idle"), String::from("approach"),
    ])]
    scenarios: Vec<String>,
    /// Samples generated per scenario.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Frames per generated sequence.
    #[arg(long, default_value_t = 48)]
    frames: usize,
    /// Joints per person.
    #[arg(long, default_value_t = 6)]
    joints: usize,
    /// Nominal capture rate stored with each sequence.
    #[arg(long, default_value_t = 30.0)]
    fps: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Configuration-bearing flags shared by `train` and `eval`. Precedence:
/// built-in defaults, then the `--config` JSON file, then explicit flags.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file with the full training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate (the decay endpoint is capped at this value).
    #[arg(long)]
    lr: Option<f64>,
    /// Positional-embedding mode: sync | unsync | sinusoidal.
    #[arg(long)]
    pe_mode: Option<String>,
    /// Disable the distance-map relational branch.
    #[arg(long)]
    no_drem: bool,
    /// Give each person-stream its own weights instead of sharing.
    #[arg(long)]
    no_share: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Category treated as normal (overrides the config file).
    #[arg(long)]
    category: Option<String>,
    /// Checkpoint output path; the loss CSV lands next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset to score (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Output path; omit to write to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset with at least two categories (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Categories to benchmark (default: every category in the dataset).
    #[arg(long, value_delimiter = ',')]
    category: Vec<String>,
    /// Output directory for report.json / report.txt and extras.
    #[arg(long)]
    out: PathBuf,
    /// Re-run the benchmark over switch values, e.g.
    /// `pe_mode=sync,unsync,sinusoidal` or `use_drem=true,false`.
    #[arg(long)]
    ablate: Option<String>,
    /// Extra per-category statistic column; only `dsp` is available.
    #[arg(long)]
    stat: Option<String>,
    /// Write per-category ROC curves as CSV.
    #[arg(long)]
    roc: bool,
    /// Export a distance-map image strip for one sample per category.
    #[arg(long)]
    maps: bool,
    /// Worker threads (overrides the H2IAD_THREADS environment variable).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

// ── entry point and exit-code policy ────────────────────────────────────────

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as ClapKind;
            let code = match e.kind() {
                ClapKind::DisplayHelp | ClapKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

// ── config resolution ───────────────────────────────────────────────────────

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                serde_json::from_str::<TrainConfig>(&text).map_err(|e| {
                    Error::Config(format!("config {}: {e}", path.display()))
                })?
            }
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(lr) = self.lr {
            cfg.initial_lr = lr;
            cfg.final_lr = cfg.final_lr.min(lr);
        }
        if let Some(mode) = &self.pe_mode {
            cfg.encoder.pe_mode = PeMode::from_str(mode)?;
        }
        if self.no_drem {
            cfg.encoder.use_distance_maps = false;
        }
        if self.no_share {
            cfg.encoder.share_streams = false;
        }
        Ok(cfg)
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let explicit = match flag {
        Some(n) => Some(n),
        None => match std::env::var("H2IAD_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                Error::Config(format!("H2IAD_THREADS must be a positive integer, got '{s}'"))
            })?),
            Err(_) => None,
        },
    };
    match explicit {
        Some(0) => Err(Error::Config("thread count must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

// ── synth ───────────────────────────────────────────────────────────────────

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut dataset: Option<InteractionDataset> = None;
    for name in &args.scenarios {
        let scenario = Scenario::from_str(name)?;
        let part = synth_generate(
            scenario,
            args.samples,
            args.seed,
            args.frames,
            args.joints,
            args.fps,
        )?;
        match &mut dataset {
            Some(d) => d.merge(part)?,
            None => dataset = Some(part),
        }
    }
    let dataset =
        dataset.ok_or_else(|| Error::Config("at least one scenario is required".into()))?;
    write_dataset(&args.out, &dataset)?;
    eprintln!(
        "wrote {} samples ({} categories) to {}",
        dataset.samples.len(),
        dataset.categories.len(),
        args.out.display()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(category) = &args.category {
        cfg.normal_category = category.clone();
    }
    if cfg.normal_category.is_empty() {
        return Err(Error::Config(
            "a normal category is required (--category or the config file)".into(),
        ));
    }
    // Echo the fully resolved configuration so the run is auditable.
    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));

    let dataset = load_dataset(&args.data, None)?;
    let model = train_one_class(&dataset, &cfg)?;
    h2iad_core::checkpoint::save(&model, &args.out)?;
    let loss_path = args.out.with_extension("loss.csv");
    write_loss_csv(&loss_path, &model.loss_history)?;
    eprintln!(
        "wrote {} and {} (final loss {:.6})",
        args.out.display(),
        loss_path.display(),
        model.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut text = String::from("epoch,mean_nll\n");
    for (i, loss) in history.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, loss));
    }
    fs::write(path, text)?;
    Ok(())
}

// ── score ───────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct ScoreLine<'a> {
    index: usize,
    category: &'a str,
    score: f64,
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let model = h2iad_core::checkpoint::load(&args.model)?;
    let dataset = load_dataset(&args.data, Some(model.config.encoder.joints))?;
    let mut out = String::new();
    for (index, pair) in dataset.samples.iter().enumerate() {
        let line = ScoreLine {
            index,
            category: &pair.category,
            score: model.score(pair)?,
        };
        out.push_str(&serde_json::to_string(&line).expect("score line serializes"));
        out.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, out)?,
        None => {
            std::io::stdout().write_all(out.as_bytes())?;
        }
    }
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────────

/// One benchmark execution inside a report: the switch setting it used,
/// the fully resolved configuration, and the resulting table.
#[derive(Serialize)]
struct EvalRun {
    label: String,
    config: TrainConfig,
    report: BenchmarkReport,
}

#[derive(Serialize)]
struct EvalReport {
    categories: Vec<String>,
    stat: Option<String>,
    runs: Vec<EvalRun>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let base = args.config.resolve()?;
    let include_dsp = match args.stat.as_deref() {
        None => false,
        Some("dsp") => true,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown statistic '{other}'; available: dsp"
            )))
        }
    };
    let threads = resolve_threads(args.threads)?;
    let dataset = load_dataset(&args.data, None)?;
    let categories: Vec<String> = if args.category.is_empty() {
        dataset.categories.iter().cloned().collect()
    } else {
        args.category.clone()
    };

    let variants: Vec<(String, TrainConfig)> = match &args.ablate {
        Some(spec) => ablation_variants(&base, spec)?,
        None => vec![("base".into(), base.clone())],
    };

    let mut runs = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        let report = run_benchmark(&dataset, &categories, &cfg, threads)?;
        runs.push(EvalRun { label, config: cfg, report });
    }

    fs::create_dir_all(&args.out)?;
    let mut text = String::new();
    for run in &runs {
        text.push_str(&format!("[{}]\n", run.label));
        text.push_str(&run.report.text_table(include_dsp));
        text.push('\n');
    }
    let report = EvalReport {
        categories,
        stat: args.stat.clone(),
        runs,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(args.out.join("report.json"), &json)?;
    fs::write(args.out.join("report.txt"), &text)?;
    print!("{text}");

    if args.roc {
        write_roc_curves(&args.out, &report)?;
    }
    if args.maps {
        write_map_strips(&args.out, &dataset, &report)?;
    }
    Ok(())
}

/// Parses `key=v1,v2,...` into one configuration per value. Supported keys:
/// `pe_mode`, `use_drem` (alias `drem`), `share_params` (alias `share`).
fn ablation_variants(base: &TrainConfig, spec: &str) -> Result<Vec<(String, TrainConfig)>> {
    let (key, values) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("--ablate expects key=v1,v2,..., got '{spec}'"))
    })?;
    let mut out = Vec::new();
    for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let mut cfg = base.clone();
        match key {
            "pe_mode" => cfg.encoder.pe_mode = PeMode::from_str(value)?,
            "use_drem" | "drem" => cfg.encoder.use_distance_maps = parse_bool(value)?,
            "share_params" | "share" => cfg.encoder.share_streams = parse_bool(value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation switch '{other}'; available: pe_mode, use_drem, share_params"
                )))
            }
        }
        out.push((format!("{key}={value}"), cfg));
    }
    if out.is_empty() {
        return Err(Error::Config(format!("--ablate '{spec}' lists no values")));
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got '{other}'"))),
    }
}

fn write_roc_curves(dir: &Path, report: &EvalReport) -> Result<()> {
    for run in &report.runs {
        for row in &run.report.rows {
            let mut csv = String::from("fpr,tpr\n");
            for (fpr, tpr) in &row.roc {
                csv.push_str(&format!("{fpr},{tpr}\n"));
            }
            let name = if report.runs.len() == 1 {
                format!("roc_{}.csv", row.category)
            } else {
                format!("roc_{}_{}.csv", sanitize(&run.label), row.category)
            };
            fs::write(dir.join(name), csv)?;
        }
    }
    Ok(())
}

/// Renders the per-frame distance maps of the first sample of each
/// benchmarked category, resampled to the configured frame count.
fn write_map_strips(dir: &Path, dataset: &InteractionDataset, report: &EvalReport) -> Result<()> {
    let maps_dir = dir.join("maps");
    fs::create_dir_all(&maps_dir)?;
    let frames = report.runs[0].config.encoder.frames;
    for category in &report.categories {
        let Some(pair) = dataset.samples.iter().find(|s| &s.category == category) else {
            continue;
        };
        let resampled = resample_pair(pair, frames)?;
        let maps = distance_maps(&resampled);
        h2iad_core::distmap::export_map_strip(&maps, maps_dir.join(category))?;
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
