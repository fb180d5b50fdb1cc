use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evifusion::belief::{combine_many, degree_of_conflict, pignistic, SimpleMass};
use evifusion::checkpoint::Checkpoint;
use evifusion::config::{Grouping, RunConfig, OUTPUT_ROOT_ENV};
use evifusion::data::io::{load_dataset, write_dataset};
use evifusion::data::synthetic::{SyntheticConfig, TextConfig};
use evifusion::data::generate_synthetic;
use evifusion::encoders::EncoderKind;
use evifusion::experiment::{collect_reports, evaluate_checkpoint, initial_model, load_data, train_all, write_report, Summary};
use evifusion::gradcheck::{check_gradients, GradCheckOptions, DEFAULT_TOLERANCE};
use evifusion::metrics::MetricsReport;
use evifusion::{Error, ErrorClass, Result};

/// Evidential multimodal classification experiments.
#[derive(Parser)]
#[command(name = "evifusion", version)]
struct Cli {
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-source dataset.
    Synth(SynthArgs),
    /// Train one model per seed and write checkpoints and reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split of its dataset.
    Eval(EvalArgs),
    /// Fuse mass functions stored as JSON files with Dempster's rule.
    Combine(CombineArgs),
    /// Compare the model gradient with finite differences.
    CheckGrad(CheckGradArgs),
    /// Summarize finished runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with a synthetic data configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    positive_rate: Option<f64>,
    #[arg(long)]
    conflict_rate: Option<f64>,
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Number of structured feature blocks.
    #[arg(long)]
    blocks: Option<usize>,
    /// Numerical features per block.
    #[arg(long)]
    block_dim: Option<usize>,
    /// Categorical features per block.
    #[arg(long)]
    categorical: Option<usize>,
    /// Class separation of every structured block.
    #[arg(long)]
    informativeness: Option<f64>,
    /// Embedding dimension of the text source; 0 disables it.
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    text_informativeness: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest, dataset directory or CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Root seed; repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    fusion_grouping: Option<Grouping>,
    /// Expected number of evidence sources.
    #[arg(long)]
    sources: Option<usize>,
    /// Encoder for structured sources.
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    prototypes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Auxiliary loss weight of structured sources.
    #[arg(long)]
    alpha: Option<f64>,
    /// Auxiliary loss weight of text sources.
    #[arg(long)]
    beta: Option<f64>,
    /// Output root; defaults to the config, then $EVIFUSION_OUTPUT_ROOT, then ./runs.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// Train seeds one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to evaluate on; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CombineArgs {
    /// JSON files, each `{"singletons": [...], "ignorance": x}`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Also print the pairwise conflict and pignistic probabilities.
    #[arg(long)]
    details: bool,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Check every parameter instead of a seeded subset.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories containing seed-*/report.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Combine(args) => combine(args),
        Command::CheckGrad(args) => check_grad(args),
        Command::Report(args) => report(args),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)?
        }
        None => SyntheticConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(n, seed, classes, positive_rate, conflict_rate, missing_rate);
    if args.blocks.is_some() || args.block_dim.is_some() || args.categorical.is_some() || args.informativeness.is_some() {
        let first = cfg.blocks.first().cloned();
        let count = args.blocks.unwrap_or(cfg.blocks.len().max(1));
        let dim = args.block_dim.or(first.as_ref().map(|b| b.numerical)).unwrap_or(8);
        let cat = args.categorical.or(first.as_ref().map(|b| b.categorical)).unwrap_or(0);
        let info = args.informativeness.or(first.as_ref().map(|b| b.informativeness)).unwrap_or(1.5);
        cfg = cfg.with_blocks(count, dim, info, cat);
    }
    match args.text_dim {
        Some(0) => cfg.text = None,
        Some(dim) => {
            let text = cfg.text.get_or_insert(TextConfig { name: "notes".into(), dim, informativeness: 1.5 });
            text.dim = dim;
        }
        None => {}
    }
    if let Some(info) = args.text_informativeness {
        match &mut cfg.text {
            Some(t) => t.informativeness = info,
            None => return Err(Error::Config("--text-informativeness needs a text source".into())),
        }
    }
    let dataset = generate_synthetic(&cfg)?;
    write_dataset(&args.out, &dataset, Some(&cfg))?;
    let positives = dataset.labels().iter().filter(|&&y| y != 0).count();
    log::info!(
        "wrote {} samples ({} non-zero labels) to {}",
        dataset.len(),
        positives,
        args.out.display()
    );
    Ok(())
}

fn run_config(config: Option<&Path>, data: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = data {
        cfg.data.path = Some(path);
        cfg.data.synthetic = None;
    } else if cfg.data.path.is_none() && cfg.data.synthetic.is_none() {
        cfg.data.synthetic = Some(SyntheticConfig::default());
    }
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = run_config(args.config.as_deref(), args.data)?;
    if let Some(task) = args.task {
        cfg.task = task;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(g) = args.fusion_grouping {
        cfg.fusion.grouping = g;
    }
    if args.sources.is_some() {
        cfg.fusion.sources = args.sources;
    }
    if let Some(e) = args.encoder {
        cfg.fusion.structured_encoder = e;
    }
    if let Some(h) = args.prototypes {
        cfg.model.prototypes = h;
    }
    if let Some(v) = args.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.alpha {
        cfg.fusion.structured_aux_weight = v;
    }
    if let Some(v) = args.beta {
        cfg.fusion.text_aux_weight = v;
    }
    let root = cfg.output_root(args.output.as_deref());
    log::debug!("output root {} (override with --output or ${OUTPUT_ROOT_ENV})", root.display());
    let (dir, summary) = train_all(&cfg, &root, args.force, !args.sequential)?;
    log::info!("wrote {}", dir.display());
    print_summary(&summary);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let data = match &args.data {
        Some(path) => load_dataset(path)?,
        None => {
            let cfg = RunConfig { data: ckpt.data.clone(), ..RunConfig::default() };
            load_data(&cfg)?
        }
    };
    let report = evaluate_checkpoint(&ckpt, &data, &args.split)?;
    match &args.out {
        Some(path) => write_report(path, &report),
        None => print_json(&report),
    }
}

fn combine(args: CombineArgs) -> Result<()> {
    let masses = args
        .files
        .iter()
        .map(|path| {
            let bytes = std::fs::read(path)?;
            serde_json::from_slice::<SimpleMass<f64>>(&bytes)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = combine_many(&masses)?;
    if args.details {
        let conflict = masses
            .iter()
            .map(|a| masses.iter().map(|b| degree_of_conflict(a, b)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        print_json(&serde_json::json!({
            "fused": fused,
            "pignistic": pignistic(&fused),
            "conflict": conflict,
        }))
    } else {
        print_json(&fused)
    }
}

fn check_grad(args: CheckGradArgs) -> Result<()> {
    let cfg = run_config(args.config.as_deref(), args.data)?;
    cfg.validate()?;
    let data = load_data(&cfg)?;
    let (prepared, model) = initial_model(&cfg, &data.dataset, args.seed)?;
    let batch = &prepared.train[..args.batch.clamp(1, prepared.train.len())];
    let opts = GradCheckOptions { tolerance: args.tolerance, all: args.all, seed: args.seed, ..GradCheckOptions::default() };
    let report = check_gradients(&model, batch, &opts)?;
    print_json(&report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:e} at {}",
            report.max_error,
            report.worst_param.as_deref().unwrap_or("?")
        )))
    }
}

fn print_summary(summary: &Summary) {
    println!("task {}  config {}  runs {}", summary.task, &summary.config_hash[..12], summary.runs.len());
    for name in MetricsReport::NAMES {
        let s = &summary.aggregate[name];
        println!("  {name:<12} {:.4} ± {:.4}", s.mean, s.stderr);
    }
}

fn report(args: ReportArgs) -> Result<()> {
    for dir in &args.runs {
        let summary = collect_reports(dir)?;
        if args.json {
            print_json(&summary)?;
        } else {
            println!("{}", dir.display());
            print_summary(&summary);
        }
    }
    Ok(())
}
