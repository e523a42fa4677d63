//! File-based pipeline stages behind the `qpg` binary.
//!
//! Each stage reads declared input files and writes declared output files;
//! every stochastic stage takes an explicit seed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qubo_passgen::boltzmann::{GibbsConfig, GibbsSampler, QuboModel};
use qubo_passgen::corpus::{filter_by_token_length, load_corpus, make_splits, SplitPlan};
use qubo_passgen::encoding::{BitVector, EncodingScheme, PasswordCodec};
use qubo_passgen::evaluate::EvalReport;
use qubo_passgen::placement::{
    blockade_graph, force_placement, pin_y_coordinates, render_svg, sample_blockade_states,
    BlockadeSamplerConfig, DeviceConstraints, Placement, PlacementParams,
};
use qubo_passgen::seeded_rng;
use qubo_passgen::tokenizer::{train_bpe, TokenVocabulary};
use qubo_passgen::training::{train, AdamParams, Checkpoint, TrainConfig};

/// Marks an error caused by how the command was invoked rather than by its data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "qpg",
    version,
    about = "Password generation with Boltzmann QUBOs"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a BPE vocabulary from a password file.
    Tokenize(TokenizeArgs),
    /// Train one QUBO per fold.
    Train(TrainArgs),
    /// Draw passwords from a trained model.
    Sample(SampleArgs),
    /// Lay out a model's qubits as atoms and check device constraints.
    Place(PlaceArgs),
    /// Score generated passwords against an evaluation fold.
    Eval(EvalArgs),
    /// Decode blockade-respecting samples on a placement.
    Emulate(EmulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Newline-delimited password file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_len: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Target vocabulary size T, including the end-of-word token.
    #[arg(long, default_value_t = 256)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    /// binary8, stacked16, stacked20, stacked24, binary, onehot or stacked:k1,k2,...
    #[arg(long)]
    pub encoding: String,
    /// Tokens per password M.
    #[arg(long, default_value_t = 6)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Held-out fold to train against; repeatable. Default: every fold.
    #[arg(long = "fold")]
    pub fold: Vec<usize>,
    /// Seed of the fold assignment.
    #[arg(long)]
    pub split_seed: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples_per_iter: usize,
    #[arg(long, default_value_t = 100)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thinning: usize,
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
    #[arg(long, default_value_t = 0.01)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_penalty: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GibbsArgs {
    #[arg(long, default_value_t = 100)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thinning: usize,
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub gibbs: GibbsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlaceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub step_size: f64,
    /// Initial circle radius is 1/c meters (default: diameter 0.9 of the area).
    #[arg(long)]
    pub c: Option<f64>,
    /// y-values closer than this many micrometers are pinned together.
    #[arg(long, default_value_t = 0.1)]
    pub pin_epsilon: f64,
    #[arg(long, default_value_t = 4.0)]
    pub blockade_radius: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Layout drawing; defaults to the output path with an `.svg` extension.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Generated passwords, one per line.
    #[arg(long)]
    pub generated: PathBuf,
    /// Evaluation fold, one password per line.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 1000)]
    pub baseline_count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Report JSON; a per-password CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EmulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub placement: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub count: usize,
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thinning: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A trained model together with the vocabulary it decodes into.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub encoding: String,
    pub fold: usize,
    pub vocabulary: TokenVocabulary,
    pub model: QuboModel,
}

impl ModelArtifact {
    pub fn codec(&self) -> anyhow::Result<PasswordCodec> {
        Ok(PasswordCodec::new(
            self.model.scheme.clone(),
            self.model.max_tokens,
            self.vocabulary.eow_index(),
        )?)
    }

    fn decode_all(&self, vectors: &[BitVector], seed: u64) -> anyhow::Result<Vec<String>> {
        let codec = self.codec()?;
        let mut rng = seeded_rng(seed, DECODE_STREAM);
        vectors
            .iter()
            .map(|z| {
                Ok(self
                    .vocabulary
                    .detokenize(&codec.decode_password(z, &mut rng)?))
            })
            .collect()
    }
}

// Sampler chains use the low streams of a seed.
const DECODE_STREAM: u64 = u64::MAX;

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Tokenize(a) => cmd_tokenize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Place(a) => cmd_place(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Emulate(a) => cmd_emulate(&a),
    }
}

fn read_to_string(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    write(path, json)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Lines of a password file; a trailing newline does not add an empty entry.
pub fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
        .collect())
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    write(path, out)
}

pub fn load_vocabulary(path: &Path) -> anyhow::Result<TokenVocabulary> {
    TokenVocabulary::from_json(&read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_tokenize(a: &TokenizeArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.corpus.corpus, a.corpus.min_len, a.corpus.max_len)?;
    let vocab = train_bpe(&corpus, a.vocab_size)?;
    info!("{} passwords, {} tokens", corpus.len(), vocab.len());
    let mut json = vocab.to_json()?;
    json.push('\n');
    write(&a.out, json)
}

fn model_path(dir: &Path, encoding: &str, fold: usize) -> PathBuf {
    dir.join(format!("model_{}_fold{fold}.json", file_stem(encoding)))
}

fn file_stem(encoding: &str) -> String {
    encoding
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

/// Output files written by [`cmd_train`] for one fold.
pub fn train_outputs(dir: &Path, encoding: &str, fold: usize) -> [PathBuf; 4] {
    let stem = file_stem(encoding);
    [
        model_path(dir, encoding, fold),
        dir.join(format!("loss_{stem}_fold{fold}.csv")),
        dir.join(format!("checkpoint_{stem}_fold{fold}.json")),
        dir.join(format!("eval_fold{fold}.txt")),
    ]
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let vocab = load_vocabulary(&a.vocab)?;
    let scheme =
        EncodingScheme::from_name(&a.encoding, vocab.len()).map_err(|e| usage(e.to_string()))?;
    if a.max_tokens == 0 {
        return Err(usage("--max-tokens must be at least 1"));
    }
    let folds: Vec<usize> = if a.fold.is_empty() {
        (0..a.folds).collect()
    } else {
        a.fold.clone()
    };
    if let Some(&bad) = folds.iter().find(|&&f| f >= a.folds) {
        return Err(usage(format!(
            "--fold {bad} is out of range for --folds {}",
            a.folds
        )));
    }

    let corpus = load_corpus(&a.corpus.corpus, a.corpus.min_len, a.corpus.max_len)?;
    let filtered = filter_by_token_length(&corpus, &vocab, a.max_tokens);
    info!(
        "kept {} of {} passwords ({} longer than {} tokens, {} out of vocabulary)",
        filtered.corpus.len(),
        corpus.len(),
        filtered.too_long,
        a.max_tokens,
        filtered.out_of_vocabulary
    );
    let corpus = filtered.corpus;
    let plan = make_splits(&corpus, a.folds, a.split_seed)?;
    write_json(&a.out_dir.join("split.json"), &plan)?;
    let codec = PasswordCodec::new(scheme.clone(), a.max_tokens, vocab.eow_index())?;

    folds
        .par_iter()
        .try_for_each(|&fold| -> anyhow::Result<()> {
            let (train_set, eval_set) = plan.partition(&corpus, fold)?;
            let bits = train_set
                .passwords()
                .iter()
                .map(|p| codec.encode_password(&vocab.tokenize(p)?))
                .collect::<qubo_passgen::Result<Vec<_>>>()?;
            let config = TrainConfig {
                iterations: a.iterations,
                samples_per_iter: a.samples_per_iter,
                gibbs: GibbsConfig {
                    burn_in: a.burn_in,
                    thinning: a.thinning,
                    chains: a.chains,
                },
                adam: AdamParams {
                    step_size: a.step_size,
                    ..AdamParams::default()
                },
                init_penalty: a.init_penalty,
                seed: fold_seed(a.seed, fold),
                ..TrainConfig::default()
            };
            info!(
                "fold {fold}: training n = {} on {} passwords",
                codec.bits(),
                bits.len()
            );
            let outcome = train(&bits, &scheme, a.max_tokens, &config)?;
            let [model_file, loss_file, checkpoint_file, eval_file] =
                train_outputs(&a.out_dir, &a.encoding, fold);
            write_json(
                &model_file,
                &ModelArtifact {
                    encoding: a.encoding.clone(),
                    fold,
                    vocabulary: vocab.clone(),
                    model: outcome.model.clone(),
                },
            )?;
            write(&loss_file, outcome.loss_csv())?;
            write_json(
                &checkpoint_file,
                &Checkpoint {
                    model: outcome.model.clone(),
                    iteration: config.iterations,
                    adam: outcome.adam.clone(),
                    seed: config.seed,
                    config,
                },
            )?;
            write_lines(&eval_file, eval_set.passwords())
        })
}

/// Training seed of `fold`, derived from the command seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    use rand::RngCore;
    seeded_rng(seed, fold as u64 + 1).next_u64()
}

pub fn load_model(path: &Path) -> anyhow::Result<ModelArtifact> {
    read_json(path)
}

pub fn cmd_sample(a: &SampleArgs) -> anyhow::Result<()> {
    let artifact = load_model(&a.model)?;
    let config = GibbsConfig {
        burn_in: a.gibbs.burn_in,
        thinning: a.gibbs.thinning,
        chains: a.gibbs.chains,
    };
    if config.chains == 0 {
        return Err(usage("--chains must be at least 1"));
    }
    let batch = GibbsSampler::new(&artifact.model.qubo).sample(a.count, &config, a.seed);
    let passwords = artifact.decode_all(&batch.vectors, a.seed)?;
    write_lines(&a.out, &passwords)
}

/// Placement file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementArtifact {
    #[serde(flatten)]
    pub placement: Placement,
    pub params: PlacementParams,
    pub pin_epsilon: f64,
}

pub fn cmd_place(a: &PlaceArgs) -> anyhow::Result<()> {
    let artifact = load_model(&a.model)?;
    let constraints = DeviceConstraints {
        blockade_radius: a.blockade_radius,
        ..DeviceConstraints::default()
    };
    let mut params = PlacementParams::new(a.iterations, a.step_size, &constraints, a.seed);
    if let Some(c) = a.c {
        params.c = c;
    }
    if params.c.is_nan()
        || params.c <= 0.0
        || a.pin_epsilon.is_nan()
        || a.pin_epsilon < 0.0
        || a.blockade_radius.is_nan()
        || a.blockade_radius <= 0.0
    {
        return Err(usage(
            "--c and --blockade-radius must be positive and --pin-epsilon nonnegative",
        ));
    }
    let placed = force_placement(&artifact.model.qubo, &constraints, &params)?;
    let placement = pin_y_coordinates(&placed, a.pin_epsilon)?;
    for check in placement.record.checks.iter().filter(|c| !c.passed) {
        log::warn!(
            "{} violated by {} pairs",
            check.name,
            check.violations.len()
        );
    }
    let graph = blockade_graph(&placement.coordinates_um, constraints.blockade_radius)?;
    let svg_path = a.svg.clone().unwrap_or_else(|| a.out.with_extension("svg"));
    write(&svg_path, render_svg(&placement, &graph))?;
    write_json(
        &a.out,
        &PlacementArtifact {
            placement,
            params,
            pin_epsilon: a.pin_epsilon,
        },
    )
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let generated = read_lines(&a.generated)?;
    if generated.is_empty() {
        bail!("{} contains no passwords", a.generated.display());
    }
    let eval_set = read_lines(&a.eval)?;
    let vocab = load_vocabulary(&a.vocab)?;
    let report = EvalReport::compute(
        &generated,
        &eval_set,
        &vocab,
        a.max_tokens,
        a.baseline_count,
        a.seed,
    )?;
    info!(
        "overlap {:.4}, MED {:.3} ± {:.3}, uniform {:.3} ± {:.3}",
        report.overlap,
        report.med_mean,
        report.med_std,
        report.baseline_med_mean,
        report.baseline_med_std
    );
    write_json(&a.out, &report)?;
    write(&a.out.with_extension("csv"), report_csv(&report)?)
}

/// Per-password MED rows followed by a summary row with the uniform baseline columns.
pub fn report_csv(report: &EvalReport) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "password",
        "med",
        "overlap",
        "med_mean",
        "med_std",
        "baseline_med_mean",
        "baseline_med_std",
    ])?;
    for row in &report.med_values {
        w.write_record([
            row.password.as_str(),
            &row.med.to_string(),
            "",
            "",
            "",
            "",
            "",
        ])?;
    }
    w.write_record([
        "",
        "",
        &report.overlap.to_string(),
        &report.med_mean.to_string(),
        &report.med_std.to_string(),
        &report.baseline_med_mean.to_string(),
        &report.baseline_med_std.to_string(),
    ])?;
    Ok(w.into_inner()?)
}

pub fn cmd_emulate(a: &EmulateArgs) -> anyhow::Result<()> {
    let artifact = load_model(&a.model)?;
    let placement: PlacementArtifact = read_json(&a.placement)?;
    let coords = &placement.placement.coordinates_um;
    if coords.len() != artifact.model.n() {
        bail!(
            "placement has {} atoms but the model has {} qubits",
            coords.len(),
            artifact.model.n()
        );
    }
    if a.lambda.is_nan() || a.lambda <= 0.0 {
        return Err(usage("--lambda must be positive"));
    }
    let graph = blockade_graph(coords, placement.placement.constraints.blockade_radius)?;
    let config = BlockadeSamplerConfig {
        lambda: a.lambda,
        burn_in: a.burn_in,
        thinning: a.thinning,
    };
    let batch = sample_blockade_states(&graph, a.count, &config, a.seed);
    let passwords = artifact.decode_all(&batch.vectors, a.seed)?;
    write_lines(&a.out, &passwords)
}

/// Reads the split plan written by [`cmd_train`].
pub fn load_split(path: &Path) -> anyhow::Result<SplitPlan> {
    read_json(path)
}
