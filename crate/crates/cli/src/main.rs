//! `gic`: synthesize data, train, decode, evaluate, build LMs and run sweeps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "gic", version, about = "CTC recognition with gated interlayer collaboration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus: feature files, manifests and a vocabulary.
    SynthData(SynthArgs),
    /// Train a model and write a checkpoint plus a per-epoch metrics log.
    Train(TrainArgs),
    /// Decode a manifest with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score a hypothesis file against a reference manifest.
    Evaluate(EvaluateArgs),
    /// Train an interpolated n-gram language model.
    LmTrain(LmTrainArgs),
    /// Train one model per value of K or lambda, or run the ablation study.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Take synthesis settings from this run config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_utts: Option<usize>,
    /// Symbols including the blank.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    frames_per_token: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    feat_dim: Option<usize>,
    /// Utterances written to valid.tsv instead of train.tsv.
    #[arg(long)]
    valid: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackboneArg {
    Transformer,
    Conformer,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FusionArg {
    Gate,
    Sum,
}

/// Overrides applied on top of a run config.
#[derive(Args, Debug, Default)]
struct RunOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    backbone: Option<BackboneArg>,
    #[arg(long)]
    layers: Option<usize>,
    /// Number of intermediate taps (K).
    #[arg(long)]
    taps: Option<usize>,
    /// Intermediate loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    fusion: Option<FusionArg>,
    /// Disable embedding fusion at the taps.
    #[arg(long)]
    no_gic: bool,
    /// Drop the intermediate CTC losses.
    #[arg(long)]
    no_intermediate_loss: bool,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    valid_manifest: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run config (TOML). Without one the desk preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Metrics TSV; defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from the checkpoint at `--out`.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: RunOverrides,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Greedy,
    Beam,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Hypothesis TSV (`id<TAB>text`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    beam: Option<usize>,
    /// N-gram LM for shallow fusion (beam mode).
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    lm_weight: Option<f64>,
    #[arg(long)]
    length_bonus: Option<f64>,
    /// Also write greedy hypotheses of every tap as `<out stem>.tap<l>.tsv`.
    #[arg(long)]
    probe_taps: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UnitArg {
    Char,
    Word,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Reference manifest.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, value_enum, default_value = "char")]
    unit: UnitArg,
    /// Utterances listed in the worst-first table.
    #[arg(long, default_value_t = 10)]
    worst: usize,
}

#[derive(Args, Debug)]
struct LmTrainArgs {
    /// Transcripts, one per line.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    corpus: Option<PathBuf>,
    /// Take transcripts from a manifest instead.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    vocab: Option<PathBuf>,
    /// Take the vocabulary from a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Interpolation weights, highest order first.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Report perplexity on these transcripts too.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `k` or `lambda`.
    #[arg(long, required_unless_present = "ablation")]
    axis: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "axis")]
    values: Vec<f64>,
    /// Compare GIC against its ablated variants instead.
    #[arg(long, conflicts_with = "axis")]
    ablation: bool,
    /// Variants for `--ablation`.
    #[arg(long, value_delimiter = ',', default_value = "gic,sum-fusion,intermediate-ctc,plain-ctc")]
    variants: Vec<String>,
    /// Seeds for `--ablation`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Decode(a) => commands::decode(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::LmTrain(a) => commands::lm_train(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
