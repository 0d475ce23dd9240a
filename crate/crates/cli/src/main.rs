//! `orient`: generate corpora, train rotation classifiers, classify and
//! correct document images, and run the three-condition OCR benchmark.
//!
//! Exit codes: 0 success, 2 input/config error, 3 runtime failure
//! (numeric divergence, engine failures).

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use orient_core::data::{self, SynthConfig};
use orient_core::encoder::EncoderConfig;
use orient_core::imaging::ImageBuffer;
use orient_core::metrics::{self, MetricLevel};
use orient_core::model::{CroppingMode, HeadMode};
use orient_core::pipeline::{
    self, Condition, EngineKind, ModelClassifier, OcrEngineSpec, PipelineError,
};
use orient_core::training::{self, Checkpoint, TrainConfig, TrainingError};

#[derive(Parser)]
#[command(name = "orient", version, about = "Document rotation detection, correction, and OCR benchmarking")]
struct Cli {
    /// Log more (repeat for debug output)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderPreset {
    Desk,
    Tiny,
    Paper,
}

impl EncoderPreset {
    fn config(self) -> EncoderConfig {
        match self {
            EncoderPreset::Desk => EncoderConfig::desk(),
            EncoderPreset::Tiny => EncoderConfig::tiny(),
            EncoderPreset::Paper => EncoderConfig::paper(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadModeArg {
    MultiLayer,
    SingleLayer,
}

#[derive(Clone, Copy, ValueEnum)]
enum CroppingModeArg {
    Dynamic,
    GlobalOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Word,
    Char,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a rotation-balanced synthetic corpus with a JSONL manifest
    Synth {
        /// Number of samples (at least 4)
        #[arg(long)]
        count: usize,
        /// Corpus directory to create
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Renderer config file (TOML or JSON)
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, default_value = "en")]
        language: String,
    },
    /// Train a rotation classifier on a manifest
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Training config file (TOML or JSON); flags below override it
        #[arg(long)]
        config: Option<PathBuf>,
        /// History CSV path (default: <out>.history.csv)
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        head_mode: Option<HeadModeArg>,
        #[arg(long)]
        cropping_mode: Option<CroppingModeArg>,
        #[arg(long, value_enum, default_value = "desk")]
        encoder: EncoderPreset,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
    },
    /// Print the predicted rotation class of one image
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Classify and write the upright-corrected PNG
    Correct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three-condition OCR benchmark and write report.json/.csv
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        engine: EngineArg,
        /// Comma-separated subset of ideal,rotated,corrected
        #[arg(long, default_value = "ideal,rotated,corrected")]
        conditions: String,
        #[arg(long)]
        out: PathBuf,
        /// HTTP engine endpoint (required with --engine http)
        #[arg(long)]
        endpoint: Option<String>,
        /// Engine spec file (TOML or JSON), overridden by --engine/--endpoint
        #[arg(long)]
        engine_config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute OCR metrics for aligned ground-truth/prediction line files
    Metrics {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "word")]
        level: LevelArg,
        /// CSV output path (default: stdout only)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Input/config problems exit 2; runtime failures exit 3.
enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

fn input<E: Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime<E: Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn training_error(e: TrainingError) -> CliError {
    match e {
        TrainingError::NonFiniteGradient | TrainingError::NonFiniteLoss { .. } => runtime(e),
        other => input(other),
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::MissingEndpoint
        | PipelineError::AuthEnvMissing(_)
        | PipelineError::CroppingModeMismatch { .. }
        | PipelineError::MissingGtText(_)
        | PipelineError::EmptyGtText(_)
        | PipelineError::Checkpoint(_)
        | PipelineError::Data(_) => input(e),
        other => runtime(other),
    }
}

/// Parse a config file as TOML, falling back to JSON.
fn parse_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    match toml::from_str(&text) {
        Ok(v) => Ok(v),
        Err(toml_err) => serde_json::from_str(&text).map_err(|json_err| {
            input(format!(
                "{} is neither valid TOML ({toml_err}) nor JSON ({json_err})",
                path.display()
            ))
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            count,
            out,
            seed,
            cfg,
            language,
        } => cmd_synth(count, &out, seed, cfg.as_deref(), &language),
        Command::Train {
            manifest,
            out,
            config,
            history,
            seed,
            epochs,
            batch_size,
            learning_rate,
            patience,
            head_mode,
            cropping_mode,
            encoder,
            train_frac,
            val_frac,
        } => {
            let mut cfg: TrainConfig = match config {
                Some(path) => parse_config_file(&path)?,
                None => TrainConfig::default(),
            };
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = epochs {
                cfg.max_epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = patience {
                cfg.patience = v;
            }
            if let Some(v) = head_mode {
                cfg.head_mode = match v {
                    HeadModeArg::MultiLayer => HeadMode::MultiLayer,
                    HeadModeArg::SingleLayer => HeadMode::SingleLayer,
                };
            }
            if let Some(v) = cropping_mode {
                cfg.cropping_mode = match v {
                    CroppingModeArg::Dynamic => CroppingMode::Dynamic,
                    CroppingModeArg::GlobalOnly => CroppingMode::GlobalOnly,
                };
            }
            cmd_train(
                &manifest,
                &out,
                history.as_deref(),
                encoder.config(),
                cfg,
                train_frac,
                val_frac,
            )
        }
        Command::Classify { ckpt, image } => cmd_classify(&ckpt, &image),
        Command::Correct { ckpt, input, out } => cmd_correct(&ckpt, &input, &out),
        Command::Bench {
            manifest,
            ckpt,
            engine,
            conditions,
            out,
            endpoint,
            engine_config,
            seed,
        } => cmd_bench(
            &manifest,
            &ckpt,
            engine,
            &conditions,
            &out,
            endpoint,
            engine_config.as_deref(),
            seed,
        ),
        Command::Metrics {
            gt,
            pred,
            level,
            out,
        } => cmd_metrics(&gt, &pred, level, out.as_deref()),
    }
}

fn cmd_synth(
    count: usize,
    out: &Path,
    seed: u64,
    cfg_path: Option<&Path>,
    language: &str,
) -> Result<(), CliError> {
    if count < 4 {
        return Err(input("need at least 4 samples to cover every rotation class"));
    }
    let cfg: SynthConfig = match cfg_path {
        Some(path) => parse_config_file(path)?,
        None => SynthConfig::default(),
    };
    std::fs::create_dir_all(out).map_err(|e| input(format!("cannot create {}: {e}", out.display())))?;
    let records = data::generate_corpus(count, seed, &cfg, language, out).map_err(input)?;
    println!(
        "wrote {} samples to {} (seed {seed}, language {language})",
        records.len(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn cmd_train(
    manifest: &Path,
    out: &Path,
    history_path: Option<&Path>,
    encoder: EncoderConfig,
    cfg: TrainConfig,
    train_frac: f64,
    val_frac: f64,
) -> Result<(), CliError> {
    let records = data::load_manifest(manifest).map_err(input)?;
    let base_dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let (train, val, _test) = data::split(&records, train_frac, val_frac, cfg.seed).map_err(input)?;
    for label in 0..4u8 {
        let in_val = val
            .iter()
            .filter(|r| r.rotation_class.label() == label)
            .count();
        if in_val < 2 {
            return Err(input(format!(
                "validation split has only {in_val} sample(s) of class {label}; need at least 2 (grow the corpus or the val fraction)"
            )));
        }
    }
    println!(
        "training on {} samples, validating on {} (config: {})",
        train.len(),
        val.len(),
        serde_json::to_string(&cfg).expect("config serializes")
    );
    let (checkpoint, history) =
        training::train(&train, &val, base_dir, &encoder, &cfg).map_err(training_error)?;
    checkpoint.save(out).map_err(runtime)?;
    let history_path = history_path
        .map(PathBuf::from)
        .unwrap_or_else(|| out.with_extension("history.csv"));
    training::write_history_csv(&history, &history_path).map_err(runtime)?;
    println!(
        "best val accuracy {:.2}% after {} epoch(s); checkpoint {} history {}",
        checkpoint.meta.best_val_accuracy,
        history.len(),
        out.display(),
        history_path.display()
    );
    Ok(())
}

fn cmd_classify(ckpt: &Path, image: &Path) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(ckpt).map_err(input)?;
    let img = ImageBuffer::from_path(image).map_err(input)?;
    let cls = pipeline::classify_rotation(&checkpoint, &img, checkpoint.meta.cropping_mode)
        .map_err(pipeline_error)?;
    println!("label={} angle={}", cls.label(), cls.angle_deg());
    Ok(())
}

fn cmd_correct(ckpt: &Path, input_path: &Path, out: &Path) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(ckpt).map_err(input)?;
    let img = ImageBuffer::from_path(input_path).map_err(input)?;
    let (corrected, cls) = pipeline::correct_image(&checkpoint, &img).map_err(pipeline_error)?;
    corrected.save_png(out).map_err(runtime)?;
    println!(
        "label={} angle={} corrected={}",
        cls.label(),
        cls.angle_deg(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    manifest: &Path,
    ckpt: &Path,
    engine: EngineArg,
    conditions: &str,
    out: &Path,
    endpoint: Option<String>,
    engine_config: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let records = data::load_manifest(manifest).map_err(input)?;
    let base_dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let checkpoint = Checkpoint::load(ckpt).map_err(input)?;
    let classifier = ModelClassifier::from_checkpoint(&checkpoint, &ckpt.display().to_string())
        .map_err(pipeline_error)?;

    let mut spec: OcrEngineSpec = match engine_config {
        Some(path) => parse_config_file(path)?,
        None => OcrEngineSpec::mock(),
    };
    spec.kind = match engine {
        EngineArg::Mock => EngineKind::Mock,
        EngineArg::Http => EngineKind::Http,
    };
    if endpoint.is_some() {
        spec.endpoint = endpoint;
    }
    if spec.kind == EngineKind::Http && spec.endpoint.is_none() {
        return Err(input("--engine http requires --endpoint (or an engine config with one)"));
    }

    let conditions: Vec<Condition> = conditions
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(input)?;
    if conditions.is_empty() {
        return Err(input("no conditions requested"));
    }

    let report = pipeline::run_bench(&records, base_dir, &classifier, &spec, &conditions, seed)
        .map_err(pipeline_error)?;
    let (json_path, csv_path) = report.write_files(out).map_err(runtime)?;
    for (condition, cr) in &report.conditions {
        println!(
            "{condition}: word_anls={:.2} char_anls={:.2} wer={:.3} cer={:.3} excluded={}",
            cr.pooled.word_anls, cr.pooled.char_anls, cr.pooled.wer, cr.pooled.cer, cr.excluded
        );
    }
    if let Some(acc) = report.rotation_accuracy {
        println!("rotation accuracy: {acc:.2}%");
    }
    println!("reports: {} {}", json_path.display(), csv_path.display());
    Ok(())
}

fn cmd_metrics(
    gt: &Path,
    pred: &Path,
    level: LevelArg,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let read_lines = |path: &Path| -> Result<Vec<String>, CliError> {
        Ok(std::fs::read_to_string(path)
            .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?
            .lines()
            .map(str::to_string)
            .collect())
    };
    let gt_lines = read_lines(gt)?;
    let pred_lines = read_lines(pred)?;
    if gt_lines.len() != pred_lines.len() {
        return Err(input(format!(
            "line count mismatch: {} has {}, {} has {}",
            gt.display(),
            gt_lines.len(),
            pred.display(),
            pred_lines.len()
        )));
    }
    if gt_lines.is_empty() {
        return Err(input("no lines to score"));
    }
    let level = match level {
        LevelArg::Word => MetricLevel::Word,
        LevelArg::Char => MetricLevel::Char,
    };
    let pairs: Vec<(String, String)> = gt_lines.into_iter().zip(pred_lines).collect();
    let anls = metrics::anls_report(&pairs, level).map_err(input)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, (gt_line, pred_line)) in pairs.iter().enumerate() {
        let wer = metrics::wer(gt_line, pred_line)
            .map_err(|e| input(format!("line {}: {e}", i + 1)))?;
        let cer = metrics::cer(gt_line, pred_line)
            .map_err(|e| input(format!("line {}: {e}", i + 1)))?;
        let similarity = match level {
            MetricLevel::Word => metrics::similarity_ratio_words(gt_line, pred_line),
            MetricLevel::Char => metrics::similarity_ratio(gt_line, pred_line),
        };
        rows.push((i + 1, anls.per_sample[i], wer, cer, similarity));
    }
    let n = rows.len() as f64;
    let mean_wer = rows.iter().map(|r| r.2).sum::<f64>() / n;
    let mean_cer = rows.iter().map(|r| r.3).sum::<f64>() / n;
    let mean_sim = rows.iter().map(|r| r.4).sum::<f64>() / n;

    println!("line\tanls\twer\tcer\tsimilarity");
    for (line, anls_v, wer, cer, sim) in &rows {
        println!("{line}\t{anls_v:.4}\t{wer:.4}\t{cer:.4}\t{sim:.4}");
    }
    println!(
        "mean\t{:.4}\t{mean_wer:.4}\t{mean_cer:.4}\t{mean_sim:.4}",
        anls.mean_value
    );

    if let Some(csv_path) = out {
        let mut csv = String::from("line,level,anls,wer,cer,similarity\n");
        for (line, anls_v, wer, cer, sim) in &rows {
            csv.push_str(&format!("{line},{level},{anls_v},{wer},{cer},{sim}\n"));
        }
        csv.push_str(&format!(
            "mean,{level},{},{mean_wer},{mean_cer},{mean_sim}\n",
            anls.mean_value
        ));
        std::fs::write(csv_path, csv)
            .map_err(|e| runtime(format!("cannot write {}: {e}", csv_path.display())))?;
        println!("csv: {}", csv_path.display());
    }
    Ok(())
}
