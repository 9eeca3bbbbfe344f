//! The `disentangle` command line: thin, deterministic wrappers over the
//! library modules. Every command takes `-o <dir>`, writes only inside it,
//! and drops a `manifest.json` recording config, seed and input fingerprints.
//! Exit codes: 0 success, 1 runtime/IO failure (JSON diagnostics on stderr),
//! 2 usage errors.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backend::{
    compute_det, fit_lda, fit_plda, length_normalize, load_scores, project_lda, save_scores,
    score_plda, BackendError,
};
use crate::dataio::{
    load_archive, load_labels, load_trials, make_splits, save_archive, save_labels, save_trials,
    subsample_balanced, DataError, EmbeddingArchive, LabelTable, SplitSpec,
};
use crate::nnet::NnetError;
use crate::probe::{
    build_contingency, chi_squared_independence, train_probe, ProbeConfig, ProbeError,
};
use crate::synth::{
    augment_corpus, generate_corpus, make_trials, AugmentSpec, FactorSpec, GeneratorSpec,
    SynthError,
};
use crate::uai::{load_uai, save_uai, UaiConfig, UaiError, UaiModel};

use manifest::{fingerprint_file, fingerprint_inputs, write_manifest, Manifest};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Runtime { kind: &'static str, message: String },
}

impl CmdError {
    fn usage(message: impl Into<String>) -> Self {
        CmdError::Usage(message.into())
    }

    fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        CmdError::Runtime { kind, message: message.into() }
    }
}

macro_rules! runtime_from {
    ($ty:ty, $kind:expr) => {
        impl From<$ty> for CmdError {
            fn from(e: $ty) -> Self {
                CmdError::Runtime { kind: $kind, message: e.to_string() }
            }
        }
    };
}
runtime_from!(DataError, "data");
runtime_from!(SynthError, "synth");
runtime_from!(NnetError, "nnet");
runtime_from!(UaiError, "uai");
runtime_from!(ProbeError, "probe");
runtime_from!(BackendError, "backend");
runtime_from!(std::io::Error, "io");

#[derive(Parser)]
#[command(
    name = "disentangle",
    version,
    about = "Speaker-embedding disentanglement toolkit: synthetic corpora, \
             adversarial invariance training, probing classifiers, and an \
             LDA/PLDA verification backend"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a factor-entangled synthetic embedding corpus
    Synth(SynthArgs),
    /// Append nuisance-resampled copies to a generated corpus
    Augment(AugmentArgs),
    /// Sample a verification trial list from a labelled corpus
    MakeTrials(MakeTrialsArgs),
    /// Train the adversarial invariance model on an embedding archive
    TrainUai(TrainUaiArgs),
    /// Split an archive into h1/h2 codes with a trained model
    Extract(ExtractArgs),
    /// Train a factor probe and report its test accuracy
    Probe(ProbeArgs),
    /// Fit LDA+PLDA on training data and score a trial list
    Score(ScoreArgs),
    /// Compute the DET curve and EER of a score file
    Det(DetArgs),
    /// Chi-squared independence test on a contingency table
    Chi2(Chi2Args),
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Augment(args) => cmd_augment(args),
        Command::MakeTrials(args) => cmd_make_trials(args),
        Command::TrainUai(args) => cmd_train_uai(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Score(args) => cmd_score(args),
        Command::Det(args) => cmd_det(args),
        Command::Chi2(args) => cmd_chi2(args),
    };
    match result {
        Ok(()) => 0,
        Err(CmdError::Usage(message)) => {
            eprintln!("error: {message}");
            2
        }
        Err(CmdError::Runtime { kind, message }) => {
            eprintln!("{}", serde_json::json!({ "error": message, "kind": kind }));
            1
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(out)
        .map_err(|e| CmdError::runtime("io", format!("creating {}: {e}", out.display())))
}

fn load_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CmdError::usage(format!("bad config {}: {e}", path.display())))
}

fn parse_dims(text: &str) -> Result<Vec<usize>, CmdError> {
    if text.is_empty() || text == "none" {
        return Ok(vec![]);
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CmdError::usage(format!("bad layer width {t:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args)]
struct SynthArgs {
    /// Output directory
    #[arg(short, long)]
    out: PathBuf,
    /// GeneratorSpec JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utts: Option<usize>,
    /// Nuisance factor as name:classes:strength, repeatable
    #[arg(long = "factor")]
    factors: Vec<String>,
    #[arg(long)]
    speaker_strength: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Probability of tying nuisance classes to the speaker
    #[arg(long)]
    confound: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_factor(text: &str) -> Result<FactorSpec, CmdError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CmdError::usage(format!(
            "factor must be name:classes:strength, got {text:?}"
        )));
    }
    let n_classes = parts[1]
        .parse()
        .map_err(|_| CmdError::usage(format!("bad class count in {text:?}")))?;
    let strength = parts[2]
        .parse()
        .map_err(|_| CmdError::usage(format!("bad strength in {text:?}")))?;
    Ok(FactorSpec::new(parts[0], n_classes, strength))
}

fn cmd_synth(args: SynthArgs) -> Result<(), CmdError> {
    let mut spec: GeneratorSpec = match &args.config {
        Some(path) => load_json_config(path)?,
        None => GeneratorSpec::default(),
    };
    if let Some(v) = args.dim {
        spec.dim = v;
    }
    if let Some(v) = args.speakers {
        spec.n_speakers = v;
    }
    if let Some(v) = args.utts {
        spec.utts_per_speaker = v;
    }
    if !args.factors.is_empty() {
        spec.nuisance_factors =
            args.factors.iter().map(|f| parse_factor(f)).collect::<Result<_, _>>()?;
    }
    if let Some(v) = args.speaker_strength {
        spec.speaker_strength = v;
    }
    if let Some(v) = args.noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.confound {
        spec.confound = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }

    ensure_out_dir(&args.out)?;
    let corpus = generate_corpus(&spec)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    save_archive(&corpus.embeddings, &args.out.join("embeddings.emba"))?;
    save_labels(&corpus.labels, &args.out.join("labels.tsv"))?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "synth",
            tool_version: VERSION,
            seed: Some(spec.seed),
            config: &spec,
            inputs: Default::default(),
            outputs: vec!["embeddings.emba".into(), "labels.tsv".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// augment

#[derive(Args)]
struct AugmentArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Manifest (or bare GeneratorSpec JSON) of the generating synth run
    #[arg(long)]
    generator: PathBuf,
    #[arg(long, default_value_t = 1)]
    copies: usize,
    #[arg(long)]
    factor: String,
    /// Swap strength; defaults to the generator strength of the factor
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_generator_spec(path: &Path) -> Result<GeneratorSpec, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CmdError::usage(format!("bad JSON {}: {e}", path.display())))?;
    let spec_value = value.get("config").cloned().unwrap_or(value);
    serde_json::from_value(spec_value)
        .map_err(|e| CmdError::usage(format!("no generator spec in {}: {e}", path.display())))
}

fn cmd_augment(args: AugmentArgs) -> Result<(), CmdError> {
    let generator = load_generator_spec(&args.generator)?;
    let strength = match args.strength {
        Some(s) => s,
        None => generator
            .nuisance_factors
            .iter()
            .find(|f| f.name == args.factor)
            .map(|f| f.strength)
            .ok_or_else(|| CmdError::usage(format!("unknown factor {:?}", args.factor)))?,
    };
    let aug = AugmentSpec {
        copies: args.copies,
        perturb_factor: args.factor.clone(),
        perturb_strength: strength,
        seed: args.seed,
    };
    let archive = load_archive(&args.archive)?;
    let labels = load_labels(&args.labels)?;
    ensure_out_dir(&args.out)?;
    let corpus = augment_corpus(&archive, &labels, &aug, &generator)?;
    save_archive(&corpus.embeddings, &args.out.join("embeddings.emba"))?;
    save_labels(&corpus.labels, &args.out.join("labels.tsv"))?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "augment",
            tool_version: VERSION,
            seed: Some(args.seed),
            config: &aug,
            inputs: fingerprint_inputs(&[&args.archive, &args.labels, &args.generator])?,
            outputs: vec!["embeddings.emba".into(), "labels.tsv".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// make-trials

#[derive(Args)]
struct MakeTrialsArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Archive providing the id universe (and its order)
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    n_target: usize,
    #[arg(long)]
    n_nontarget: usize,
    /// Restrict test utterances to factor=class
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct MakeTrialsConfig {
    n_target: usize,
    n_nontarget: usize,
    condition: Option<(String, String)>,
}

fn cmd_make_trials(args: MakeTrialsArgs) -> Result<(), CmdError> {
    let condition: Option<(String, String)> = match &args.condition {
        Some(text) => {
            let (f, c) = text
                .split_once('=')
                .ok_or_else(|| CmdError::usage("condition must be factor=class"))?;
            Some((f.to_string(), c.to_string()))
        }
        None => None,
    };
    let labels = load_labels(&args.labels)?;
    let archive = load_archive(&args.archive)?;
    let ids = archive.ids().to_vec();
    let trials = make_trials(
        &labels,
        &ids,
        args.n_target,
        args.n_nontarget,
        condition.as_ref().map(|(f, c)| (f.as_str(), c.as_str())),
        args.seed,
    )?;
    ensure_out_dir(&args.out)?;
    save_trials(&trials, &args.out.join("trials.txt"))?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "make-trials",
            tool_version: VERSION,
            seed: Some(args.seed),
            config: MakeTrialsConfig {
                n_target: args.n_target,
                n_nontarget: args.n_nontarget,
                condition,
            },
            inputs: fingerprint_inputs(&[&args.labels, &args.archive])?,
            outputs: vec!["trials.txt".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// split plumbing shared by train-uai and probe

#[derive(Args, Clone)]
struct SplitFlags {
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    /// Factor whose groups are split proportionally
    #[arg(long, default_value = "speaker")]
    group_by: String,
    /// Defaults to --seed
    #[arg(long)]
    split_seed: Option<u64>,
}

fn build_split(
    flags: &SplitFlags,
    seed: u64,
    archive: &EmbeddingArchive,
    labels: &LabelTable,
) -> Result<SplitSpec, CmdError> {
    let ids = archive.ids().to_vec();
    let split_seed = flags.split_seed.unwrap_or(seed);
    let (split, warnings) = make_splits(
        &ids,
        (flags.train_frac, flags.val_frac, flags.test_frac),
        Some((flags.group_by.as_str(), labels)),
        split_seed,
    )?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(split)
}

// ---------------------------------------------------------------------------
// train-uai

#[derive(Args)]
struct TrainUaiArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// UaiConfig JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    h1_dim: Option<usize>,
    #[arg(long)]
    h2_dim: Option<usize>,
    /// Comma-separated hidden widths; empty string for linear
    #[arg(long)]
    encoder_hidden: Option<String>,
    #[arg(long)]
    predictor_hidden: Option<String>,
    #[arg(long)]
    decoder_hidden: Option<String>,
    #[arg(long)]
    disentangler_hidden: Option<String>,
    #[arg(long)]
    w_pred: Option<f64>,
    #[arg(long)]
    w_recon: Option<f64>,
    #[arg(long)]
    w_adv: Option<f64>,
    #[arg(long)]
    adv_steps: Option<usize>,
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    adv_lr: Option<f64>,
    #[arg(long)]
    adv_batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Emit one JSON line per epoch to stdout
    #[arg(long)]
    log_json: bool,
    #[command(flatten)]
    split: SplitFlags,
}

fn cmd_train_uai(args: TrainUaiArgs) -> Result<(), CmdError> {
    let archive = load_archive(&args.archive)?;
    let labels = load_labels(&args.labels)?;

    let mut cfg: UaiConfig = match &args.config {
        Some(path) => load_json_config(path)?,
        None => {
            let speakers = labels.classes("speaker", None)?;
            UaiConfig::new(archive.dim(), speakers.len())
        }
    };
    if let Some(v) = args.h1_dim {
        cfg.h1_dim = v;
    }
    if let Some(v) = args.h2_dim {
        cfg.h2_dim = v;
    }
    if let Some(t) = &args.encoder_hidden {
        cfg.encoder_hidden = parse_dims(t)?;
    }
    if let Some(t) = &args.predictor_hidden {
        cfg.predictor_hidden = parse_dims(t)?;
    }
    if let Some(t) = &args.decoder_hidden {
        cfg.decoder_hidden = parse_dims(t)?;
    }
    if let Some(t) = &args.disentangler_hidden {
        cfg.disentangler_hidden = parse_dims(t)?;
    }
    if let Some(v) = args.w_pred {
        cfg.w_pred = v;
    }
    if let Some(v) = args.w_recon {
        cfg.w_recon = v;
    }
    if let Some(v) = args.w_adv {
        cfg.w_adv = v;
    }
    if let Some(v) = args.adv_steps {
        cfg.adv_steps_per_main = v;
    }
    if let Some(v) = args.keep_prob {
        cfg.keep_prob = v;
    }
    if let Some(v) = args.l2 {
        cfg.l2_coeff = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.adv_lr {
        cfg.adv_lr = v;
    }
    if let Some(v) = args.adv_batch {
        cfg.adv_batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }

    let split = build_split(&args.split, cfg.seed, &archive, &labels)?;
    // the model is wired for the train-split speaker count
    let train_speakers = labels.classes("speaker", Some(&split.train_ids))?;
    cfg.n_speakers = train_speakers.len();
    if cfg.input_dim != archive.dim() {
        return Err(CmdError::usage(format!(
            "config input_dim {} does not match archive dim {}",
            cfg.input_dim,
            archive.dim()
        )));
    }

    let mut model = UaiModel::build(cfg.clone())?;
    let log = model.train(&archive, &labels, &split)?;
    if args.log_json {
        for record in &log.epochs {
            println!(
                "{}",
                serde_json::to_string(record)
                    .map_err(|e| CmdError::runtime("serialize", e.to_string()))?
            );
        }
    }

    ensure_out_dir(&args.out)?;
    let fingerprint = fingerprint_file(&args.archive)?;
    save_uai(&model, &args.out.join("model"), &fingerprint)?;
    let log_json = serde_json::to_string_pretty(&log)
        .map_err(|e| CmdError::runtime("serialize", e.to_string()))?;
    fs::write(args.out.join("trainlog.json"), log_json + "\n")?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "train-uai",
            tool_version: VERSION,
            seed: Some(cfg.seed),
            config: &cfg,
            inputs: fingerprint_inputs(&[&args.archive, &args.labels])?,
            outputs: vec!["model".into(), "trainlog.json".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// extract

#[derive(Args)]
struct ExtractArgs {
    #[arg(short, long)]
    out: PathBuf,
    /// Model directory written by train-uai
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    archive: PathBuf,
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CmdError> {
    let model = load_uai(&args.model)?;
    let archive = load_archive(&args.archive)?;
    let (h1, h2) = model.extract_embeddings(&archive)?;
    ensure_out_dir(&args.out)?;
    save_archive(&h1, &args.out.join("h1.emba"))?;
    save_archive(&h2, &args.out.join("h2.emba"))?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "extract",
            tool_version: VERSION,
            seed: None,
            config: model.config(),
            inputs: fingerprint_inputs(&[&args.archive, &args.model.join("manifest.json")])?,
            outputs: vec!["h1.emba".into(), "h2.emba".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// probe

#[derive(Args)]
struct ProbeArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Factor to predict
    #[arg(long)]
    factor: String,
    /// Row label for the results table; defaults to the archive file stem
    #[arg(long)]
    name: Option<String>,
    /// ProbeConfig JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Disable per-dimension input standardization
    #[arg(long)]
    no_standardize: bool,
    /// Balance classes of the probed factor by minority subsampling
    #[arg(long)]
    balance: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    split: SplitFlags,
}

fn cmd_probe(args: ProbeArgs) -> Result<(), CmdError> {
    let archive = load_archive(&args.archive)?;
    let labels = load_labels(&args.labels)?;
    let mut cfg: ProbeConfig = match &args.config {
        Some(path) => load_json_config(path)?,
        None => ProbeConfig::default(),
    };
    if let Some(v) = args.hidden_layers {
        cfg.hidden_layers = v;
    }
    if let Some(v) = args.hidden_width {
        cfg.hidden_width = v;
    }
    if let Some(v) = args.l2 {
        cfg.l2_coeff = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if args.no_standardize {
        cfg.standardize = false;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }

    let mut split = build_split(&args.split, cfg.seed, &archive, &labels)?;
    if args.balance {
        split.train_ids =
            subsample_balanced(&split.train_ids, &args.factor, &labels, cfg.seed)?;
        split.val_ids = subsample_balanced(&split.val_ids, &args.factor, &labels, cfg.seed)?;
        split.test_ids = subsample_balanced(&split.test_ids, &args.factor, &labels, cfg.seed)?;
    }

    let (_, report) = train_probe(&archive, &labels, &args.factor, &split, &cfg)?;
    let name = match &args.name {
        Some(n) => n.clone(),
        None => args
            .archive
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embedding".to_string()),
    };

    ensure_out_dir(&args.out)?;
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| CmdError::runtime("serialize", e.to_string()))?;
    fs::write(args.out.join("probe_report.json"), report_json + "\n")?;
    // one TSV row per run; concatenating runs builds an accuracy table
    let tsv_path = args.out.join("probe_results.tsv");
    let mut tsv = if tsv_path.exists() {
        fs::read_to_string(&tsv_path)?
    } else {
        String::from("embedding\tfactor\tn_test\taccuracy\n")
    };
    tsv.push_str(&report.tsv_row(&name));
    tsv.push('\n');
    fs::write(&tsv_path, tsv)?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "probe",
            tool_version: VERSION,
            seed: Some(cfg.seed),
            config: &cfg,
            inputs: fingerprint_inputs(&[&args.archive, &args.labels])?,
            outputs: vec!["probe_report.json".into(), "probe_results.tsv".into()],
        },
    )?;
    println!("{}", report.tsv_row(&name));
    Ok(())
}

// ---------------------------------------------------------------------------
// score

#[derive(Args)]
struct ScoreArgs {
    #[arg(short, long)]
    out: PathBuf,
    /// Archive the LDA and PLDA models are fitted on
    #[arg(long)]
    train_archive: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    /// Archive the trial ids resolve against
    #[arg(long)]
    eval_archive: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// LDA output dimension
    #[arg(long)]
    lda_dim: Option<usize>,
    /// Skip the LDA stage
    #[arg(long)]
    no_lda: bool,
    #[arg(long, default_value_t = 15)]
    plda_iters: usize,
    /// Length-normalize embeddings before PLDA
    #[arg(long)]
    length_norm: bool,
}

#[derive(Serialize)]
struct ScoreConfig {
    lda_dim: Option<usize>,
    no_lda: bool,
    plda_iters: usize,
    length_norm: bool,
}

fn cmd_score(args: ScoreArgs) -> Result<(), CmdError> {
    if args.no_lda && args.lda_dim.is_some() {
        return Err(CmdError::usage("--no-lda and --lda-dim are mutually exclusive"));
    }
    let train = load_archive(&args.train_archive)?;
    let labels = load_labels(&args.train_labels)?;
    let eval = load_archive(&args.eval_archive)?;
    let trials = load_trials(&args.trials)?;

    let (mut train_proj, mut eval_proj) = if args.no_lda {
        (train, eval)
    } else {
        let speakers = labels.classes("speaker", None)?;
        let cap = train.dim().min(speakers.len().saturating_sub(1));
        let d_out = args.lda_dim.unwrap_or(cap);
        let lda = fit_lda(&train, &labels, d_out)?;
        (project_lda(&lda, &train)?, project_lda(&lda, &eval)?)
    };
    if args.length_norm {
        train_proj = length_normalize(&train_proj);
        eval_proj = length_normalize(&eval_proj);
    }
    let plda = fit_plda(&train_proj, &labels, args.plda_iters)?;
    let scores = score_plda(&plda.model, &trials, &eval_proj)?;

    ensure_out_dir(&args.out)?;
    save_scores(&scores, &args.out.join("scores.txt"))?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "score",
            tool_version: VERSION,
            seed: None,
            config: ScoreConfig {
                lda_dim: args.lda_dim,
                no_lda: args.no_lda,
                plda_iters: args.plda_iters,
                length_norm: args.length_norm,
            },
            inputs: fingerprint_inputs(&[
                &args.train_archive,
                &args.train_labels,
                &args.eval_archive,
                &args.trials,
            ])?,
            outputs: vec!["scores.txt".into()],
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// det

#[derive(Args)]
struct DetArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    scores: PathBuf,
}

fn cmd_det(args: DetArgs) -> Result<(), CmdError> {
    let scores = load_scores(&args.scores)?;
    let curve = compute_det(&scores)?;
    let summary = curve.summary(&scores);
    ensure_out_dir(&args.out)?;
    curve.save_csv(&args.out.join("det.csv"))?;
    let summary_json = serde_json::to_string(&summary)
        .map_err(|e| CmdError::runtime("serialize", e.to_string()))?;
    fs::write(args.out.join("summary.json"), summary_json.clone() + "\n")?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "det",
            tool_version: VERSION,
            seed: None,
            config: &summary,
            inputs: fingerprint_inputs(&[&args.scores])?,
            outputs: vec!["det.csv".into(), "summary.json".into()],
        },
    )?;
    println!("{summary_json}");
    Ok(())
}

// ---------------------------------------------------------------------------
// chi2

#[derive(Args)]
struct Chi2Args {
    #[arg(short, long)]
    out: PathBuf,
    /// CSV of integer counts, one row per line
    #[arg(long)]
    table: Option<PathBuf>,
    /// Build the table from a label file instead
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    factor_a: Option<String>,
    #[arg(long)]
    factor_b: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
}

fn read_counts_csv(path: &Path) -> Result<Vec<Vec<u64>>, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::runtime("io", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<u64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<u64>().map_err(|_| {
                    CmdError::usage(format!(
                        "{}: line {}: bad count {cell:?}",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Chi2Config {
    alpha: f64,
    factor_a: Option<String>,
    factor_b: Option<String>,
}

fn cmd_chi2(args: Chi2Args) -> Result<(), CmdError> {
    let (counts, inputs) = match (&args.table, &args.labels) {
        (Some(table), None) => {
            (read_counts_csv(table)?, fingerprint_inputs(&[table.as_path()])?)
        }
        (None, Some(labels_path)) => {
            let (fa, fb) = match (&args.factor_a, &args.factor_b) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(CmdError::usage(
                        "--labels requires --factor-a and --factor-b",
                    ))
                }
            };
            let labels = load_labels(labels_path)?;
            let ids = labels.utterances().to_vec();
            let table = build_contingency(&labels, fa, fb, &ids)?;
            (table.counts, fingerprint_inputs(&[labels_path.as_path()])?)
        }
        _ => return Err(CmdError::usage("provide exactly one of --table or --labels")),
    };
    let result = chi_squared_independence(&counts, args.alpha)?;
    ensure_out_dir(&args.out)?;
    let json = serde_json::to_string(&result)
        .map_err(|e| CmdError::runtime("serialize", e.to_string()))?;
    fs::write(args.out.join("chi2.json"), json.clone() + "\n")?;
    write_manifest(
        &args.out,
        &Manifest {
            command: "chi2",
            tool_version: VERSION,
            seed: None,
            config: Chi2Config {
                alpha: args.alpha,
                factor_a: args.factor_a.clone(),
                factor_b: args.factor_b.clone(),
            },
            inputs,
            outputs: vec!["chi2.json".into()],
        },
    )?;
    println!("{json}");
    Ok(())
}
