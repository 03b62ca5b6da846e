use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dualcse", version, about = "Dual-view contrastive sentence embeddings")]
pub struct Cli {
    /// Root for run outputs when `--out` is not given.
    #[arg(long, global = true, env = "DUALCSE_HOME", default_value = "dualcse-home")]
    pub home: PathBuf,

    /// Repeat for more logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder and keep the best checkpoint by dev RTE accuracy.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Train all four loss variants under one configuration and compare them.
    Ablate(TrainArgs),
    /// Top-k hypothesis retrieval under both query views.
    Retrieve(RetrieveArgs),
    /// Batch size × learning rate grid search.
    Grid(GridArgs),
    /// Write seeded synthetic train/dev/test splits.
    MakeSynthetic(SyntheticArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// `synthetic`, or a directory holding train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long, default_value = "synthetic")]
    pub data: String,

    /// Synthetic training samples.
    #[arg(long, default_value_t = 512)]
    pub n_train: usize,

    /// Synthetic dev and test samples each.
    #[arg(long, default_value_t = 128)]
    pub n_eval: usize,

    #[arg(long, default_value_t = dualcse::corpus::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// JSON file with training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_parser = ["cross", "bi"])]
    pub arch: Option<String>,

    #[arg(long, value_parser = ["full", "no_contradiction", "no_intra", "neither"])]
    pub variant: Option<String>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub tau: Option<f64>,

    #[arg(long)]
    pub eval_every: Option<usize>,

    /// Initialize from the first tower of a saved encoder directory.
    #[arg(long)]
    pub backbone: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Tune γ on dev, report per-class accuracy on test.
    Rte(EvalRteArgs),
    /// Pairwise implicitness accuracy.
    Eis(EvalEisArgs),
}

#[derive(Debug, Args)]
pub struct EvalRteArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairFormat {
    /// Pick by the keys of the first record.
    Auto,
    /// Premise/hypothesis records; the premise is the more implicit side.
    Inli,
    /// `implicit_sentence` / `explicit_sentence` records.
    Pairwise,
}

#[derive(Debug, Args)]
pub struct EvalEisArgs {
    /// Required unless a baseline is chosen.
    #[arg(long, required_unless_present = "baseline")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = PairFormat::Auto)]
    pub format: PairFormat,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Seed for the order of sentences within each pair.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// INLI-format file whose hypotheses form the candidate pool.
    #[arg(long)]
    pub pool: PathBuf,
    /// One premise per line (plain text, or JSON objects with a `premise` field).
    #[arg(long)]
    pub query_file: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1e-5, 3e-5, 5e-5])]
    pub lrs: Vec<f64>,
    /// Only allow batch sizes 16, 32 and 64.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Output directory for the repeated run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
