//! The `mmhash` command line.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime
//! failure (for example a non-finite loss).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::codes::{read_codes, search, write_codes};
use crate::config::{
    PartialConfig, TrainConfig, Variant, DEFAULT_BATCH_SIZE, DEFAULT_CODE_BITS, DEFAULT_DELTA,
    DEFAULT_EPOCHS, DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE, DEFAULT_MODALITY_DIM, DEFAULT_MU,
    DEFAULT_SEED,
};
use crate::dataio::{
    generate_synthetic, read_embeddings, read_labels, Dataset, DatasetPaths, Split, SplitManifest,
    SynthParams,
};
use crate::error::Error;
use crate::eval::{ablation_report, mean_average_precision};
use crate::pipeline::encode_items;
use crate::trainer::{load_checkpoint, save_checkpoint, train_with_observer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Caps internal parallelism when set to a positive integer.
pub const THREADS_ENV: &str = "MMHASH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mmhash", version, about = "Multi-modal hashing: train, encode, search and evaluate binary codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic clustered dataset (vision.emb, text.emb, labels.lbl, manifest.txt).
    GenSynth(GenSynthArgs),
    /// Train a model and write a checkpoint plus a per-epoch CSV log.
    Train(TrainArgs),
    /// Encode items into a binary code file with a trained checkpoint.
    Encode(EncodeArgs),
    /// Rank a code file by Hamming distance to one query code.
    Search(SearchArgs),
    /// Compute mAP of query codes against database codes.
    Eval(EvalArgs),
    /// Train and evaluate every ablation variant at several code widths.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Number of clusters (one label per cluster)
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    clusters: u64,
    /// Items per cluster
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(4..))]
    per_cluster: u64,
    /// Embedding width of each modality
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,
    /// Standard deviation of the per-coordinate Gaussian noise
    #[arg(long, default_value_t = 0.1, value_parser = non_negative)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and >= 0"))
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding vision.emb, text.emb, labels.lbl and manifest.txt
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Vision embedding file [default: <data-dir>/vision.emb]
    #[arg(long)]
    vision: Option<PathBuf>,
    /// Text embedding file [default: <data-dir>/text.emb]
    #[arg(long)]
    text: Option<PathBuf>,
    /// Label file [default: <data-dir>/labels.lbl]
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Split manifest [default: <data-dir>/manifest.txt]
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl DataArgs {
    fn paths(&self) -> Result<DatasetPaths, CliError> {
        let base = self.data_dir.as_deref().map(DatasetPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, flag: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| CliError::usage(format!("missing --{flag} (or --data-dir)")))
        };
        Ok(DatasetPaths {
            vision: pick(&self.vision, base.as_ref().map(|b| &b.vision), "vision")?,
            text: pick(&self.text, base.as_ref().map(|b| &b.text), "text")?,
            labels: pick(&self.labels, base.as_ref().map(|b| &b.labels), "labels")?,
            manifest: pick(&self.manifest, base.as_ref().map(|b| &b.manifest), "manifest")?,
        })
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, help = format!("Hash code bits, multiple of 8 in [8, 256] [default: {DEFAULT_CODE_BITS}]"))]
    bits: Option<usize>,
    #[arg(long, help = format!("Mini-batch size [default: {DEFAULT_BATCH_SIZE}]"))]
    batch_size: Option<usize>,
    #[arg(long, help = format!("Loss window fraction; lambda * batch-size must be whole [default: {DEFAULT_LAMBDA}]"))]
    lambda: Option<f64>,
    #[arg(long, help = format!("Weight of the softplus term in the metric loss [default: {DEFAULT_DELTA}]"))]
    delta: Option<f64>,
    #[arg(long, help = format!("Quantization loss weight [default: {DEFAULT_MU}]"))]
    mu: Option<f64>,
    #[arg(long, help = format!("Adam learning rate [default: {DEFAULT_LEARNING_RATE}]"))]
    lr: Option<f64>,
    #[arg(long, help = format!("Training epochs [default: {DEFAULT_EPOCHS}]"))]
    epochs: Option<usize>,
    #[arg(long, help = format!("Seed for initialization and shuffling [default: {DEFAULT_SEED}]"))]
    seed: Option<u64>,
    #[arg(long, help = format!("Vision embedding width [default: from data, else {DEFAULT_MODALITY_DIM}]"))]
    vision_dim: Option<usize>,
    #[arg(long, help = format!("Text embedding width [default: from data, else {DEFAULT_MODALITY_DIM}]"))]
    text_dim: Option<usize>,
    /// Network variant: full, concat-only, vision-only, text-only [default: full]
    #[arg(long)]
    variant: Option<Variant>,
    /// Evaluate query mAP after every epoch and log it [default: off]
    #[arg(long)]
    eval_each_epoch: bool,
}

impl ConfigArgs {
    /// Flags over config file over data-derived dims over defaults.
    fn resolve(&self, data: &Dataset) -> Result<TrainConfig, CliError> {
        let flags = PartialConfig {
            code_bits: self.bits,
            batch_size: self.batch_size,
            lambda: self.lambda,
            delta: self.delta,
            mu: self.mu,
            learning_rate: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            vision_dim: self.vision_dim,
            text_dim: self.text_dim,
            variant: self.variant,
            eval_each_epoch: self.eval_each_epoch.then_some(true),
        };
        let file = match &self.config {
            Some(path) => PartialConfig::load(path)?,
            None => PartialConfig::default(),
        };
        let from_data = PartialConfig {
            vision_dim: Some(data.vision.dim()),
            text_dim: Some(data.text.dim()),
            ..PartialConfig::default()
        };
        let config = flags.or(file).or(from_data).resolve();
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV [default: train_log.csv next to the checkpoint]
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding vision.emb, text.emb and manifest.txt
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    vision: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
    /// Manifest used with --split [default: <data-dir>/manifest.txt]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Encode only this split (train, retrieval, query) [default: every item]
    #[arg(long)]
    split: Option<Split>,
    /// Code file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Database code file
    #[arg(long)]
    codes: PathBuf,
    /// Code file holding the query [default: the database file]
    #[arg(long)]
    query_codes: Option<PathBuf>,
    /// Id of the query code
    #[arg(long)]
    query_id: u64,
    /// Number of results to print
    #[arg(long, default_value_t = 10)]
    top_n: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    query_codes: PathBuf,
    #[arg(long)]
    db_codes: PathBuf,
    /// Label file for both queries and database
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Label file for the queries [default: --labels]
    #[arg(long)]
    query_labels: Option<PathBuf>,
    /// Label file for the database [default: --labels]
    #[arg(long)]
    db_labels: Option<PathBuf>,
    /// Per-query CSV (`query_id,ap`) to write
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated code widths
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
    bits_list: Vec<usize>,
    /// Grid CSV to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ConfigSyntax { .. } | Error::ConfigInvalid { .. } | Error::NonIntegralWindow(_) => {
                EXIT_USAGE
            }
            Error::NonFiniteLoss { .. } => EXIT_RUNTIME,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails only if a pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring {THREADS_ENV}={value}"),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().ansi().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::GenSynth(a) => gen_synth(a, out),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Encode(a) => encode_cmd(a, out),
        Command::Search(a) => search_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out, err),
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::from(Error::Io(e))
}

fn gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let data = generate_synthetic(&SynthParams {
        clusters: a.clusters as usize,
        per_cluster: a.per_cluster as usize,
        dim: a.dim as usize,
        noise: a.noise,
        seed: a.seed,
    })
    .map_err(|e| CliError::usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).map_err(io)?;
    data.save(&DatasetPaths::in_dir(&a.out_dir))?;
    let (t, r, q) = data.manifest.sizes();
    writeln!(
        out,
        "wrote {} items (train {t}, retrieval {r}, query {q}) to {}",
        data.count(),
        a.out_dir.display()
    )
    .map_err(io)?;
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let data = Dataset::load(&a.data.paths()?)?;
    let config = a.config.resolve(&data)?;
    let outcome = train_with_observer(&data, &config, |r| {
        let map = r.map.map(|m| format!(" map {m:.4}")).unwrap_or_default();
        let _ = writeln!(
            err,
            "epoch {:>3}  loss {:.6}  (metric {:.6}, quant {:.6}){map}  {} ms",
            r.epoch, r.loss_total, r.loss_m, r.loss_q, r.wall_ms
        );
    })?;
    save_checkpoint(&outcome.checkpoint(&config), &a.out)?;
    let log_path = a.log.unwrap_or_else(|| sibling(&a.out, "train_log.csv"));
    outcome.log.write_csv(&log_path)?;
    writeln!(
        out,
        "checkpoint {} (k={}, variant={}), log {}",
        a.out.display(),
        config.code_bits,
        config.variant,
        log_path.display()
    )
    .map_err(io)?;
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(name),
        _ => PathBuf::from(name),
    }
}

fn encode_cmd(a: EncodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let base = a.data_dir.as_deref().map(DatasetPaths::in_dir);
    let vision_path = a
        .vision
        .or_else(|| base.as_ref().map(|b| b.vision.clone()))
        .ok_or_else(|| CliError::usage("missing --vision (or --data-dir)"))?;
    let text_path = a
        .text
        .or_else(|| base.as_ref().map(|b| b.text.clone()))
        .ok_or_else(|| CliError::usage("missing --text (or --data-dir)"))?;
    let checkpoint = load_checkpoint(&a.checkpoint)?;
    let vision = read_embeddings(&vision_path)?;
    let text = read_embeddings(&text_path)?;
    let ids: Vec<usize> = match a.split {
        Some(split) => {
            let manifest_path = a
                .manifest
                .or_else(|| base.as_ref().map(|b| b.manifest.clone()))
                .ok_or_else(|| CliError::usage("--split needs --manifest (or --data-dir)"))?;
            let text_manifest = std::fs::read_to_string(&manifest_path).map_err(io)?;
            let manifest = SplitManifest::parse(&text_manifest)?;
            manifest.check(vision.count())?;
            manifest.ids(split).iter().map(|&id| id as usize).collect()
        }
        None => (0..vision.count()).collect(),
    };
    let index = encode_items(&checkpoint.params, checkpoint.variant, &vision, &text, &ids)?;
    write_codes(&index, &a.out)?;
    writeln!(
        out,
        "encoded {} items at {} bits to {}",
        index.len(),
        checkpoint.params.code_bits(),
        a.out.display()
    )
    .map_err(io)?;
    Ok(())
}

fn search_cmd(a: SearchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let db = read_codes(&a.codes)?;
    let query_source = match &a.query_codes {
        Some(path) => read_codes(path)?,
        None => db.clone(),
    };
    let pos = query_source
        .position_of(a.query_id)
        .ok_or_else(|| CliError::from(Error::IdOutOfRange {
            id: a.query_id,
            count: query_source.len(),
        }))?;
    let ranked = search(&db, &query_source.code(pos))?;
    let mut text = String::from("rank,id,distance\n");
    for (rank, (id, dist)) in ranked.iter().take(a.top_n).enumerate() {
        text.push_str(&format!("{},{id},{dist}\n", rank + 1));
    }
    out.write_all(text.as_bytes()).map_err(io)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let q_path = a
        .query_labels
        .or_else(|| a.labels.clone())
        .ok_or_else(|| CliError::usage("missing --labels or --query-labels"))?;
    let db_path = a
        .db_labels
        .or_else(|| a.labels.clone())
        .ok_or_else(|| CliError::usage("missing --labels or --db-labels"))?;
    let queries = read_codes(&a.query_codes)?;
    let db = read_codes(&a.db_codes)?;
    let q_labels = read_labels(&q_path)?;
    let db_labels = if db_path == q_path {
        q_labels.clone()
    } else {
        read_labels(&db_path)?
    };
    let result = mean_average_precision(&queries, &q_labels, &db, &db_labels)?;
    if let Some(path) = &a.out {
        result.write_csv(path)?;
    }
    writeln!(out, "{}", result.summary_line()).map_err(io)?;
    Ok(())
}

fn ablate_cmd(a: AblateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if a.bits_list.is_empty() {
        return Err(CliError::usage("--bits-list is empty"));
    }
    let data = Dataset::load(&a.data.paths()?)?;
    let config = a.config.resolve(&data)?;
    for &bits in &a.bits_list {
        TrainConfig {
            code_bits: bits,
            ..config.clone()
        }
        .validate()?;
    }
    let _ = writeln!(
        err,
        "training {} variants x {} widths",
        Variant::ALL.len(),
        a.bits_list.len()
    );
    let report = ablation_report(&data, &config, &a.bits_list)?;
    report.write_csv(&a.out)?;
    out.write_all(report.to_csv().as_bytes()).map_err(io)?;
    Ok(())
}
