use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "codert", version, about = "RNN-Transducer training with co-learned encoder distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from a task spec.
    GenData(GenDataArgs),
    /// Train in one of the baseline, separate, static or colearn modes.
    Train(TrainArgs),
    /// Decode a split with a checkpoint and report token WER.
    Eval(EvalArgs),
    /// Entropy histograms, encoder confusion tables or teacher-student error curves.
    Diagnose(DiagnoseArgs),
    /// Run the embedded oracle suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Task spec as JSON (`vocab_size`, `feature_dim`, `duration_range`, ...).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of utterances.
    #[arg(long, default_value_t = 2400)]
    pub num: usize,
    /// Train/dev/test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    pub split: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Baseline,
    Separate,
    Static,
    Colearn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Student,
    Teacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TopKFrom {
    Teacher,
    Student,
    Union,
}

/// Every flag overrides the config key of the same name (dashes become
/// underscores).
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long, value_enum)]
    pub topk_source: Option<TopKFrom>,
    /// Sets all four seeds at once.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seed_data: Option<u64>,
    #[arg(long)]
    pub seed_init_student: Option<u64>,
    #[arg(long)]
    pub seed_init_teacher: Option<u64>,
    #[arg(long)]
    pub seed_shuffle: Option<u64>,
    #[arg(long)]
    pub teacher_checkpoint: Option<PathBuf>,
    /// Corpus directory written by `gen-data`; otherwise the corpus is generated from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Encoder architecture trained in baseline mode.
    #[arg(long, value_enum)]
    pub baseline_encoder: Option<Which>,
}

#[derive(Debug, Args)]
pub struct DataSource {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory; defaults to regenerating the corpus recorded in the checkpoint's config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_enum, default_value_t = Which::Student)]
    pub which: Which,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
    /// Per-utterance hypotheses file (default: next to the checkpoint).
    #[arg(long)]
    pub hyps: Option<PathBuf>,
    #[arg(long)]
    pub max_utterances: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Entropy,
    Confusion,
    Tscurve,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint (entropy, confusion).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, value_enum, default_value_t = Which::Student)]
    pub which: Which,
    /// Utterances in the sampled batch (entropy, confusion).
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Seed choosing the batch.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Entries per reference token (confusion).
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    /// Run directories or metrics files (tscurve).
    #[arg(long = "run", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Column names for the runs (tscurve; default: directory names).
    #[arg(long = "name", num_args = 1..)]
    pub names: Vec<String>,
    /// Trailing step records averaged for the summary (tscurve).
    #[arg(long, default_value_t = 1000)]
    pub window: usize,
    /// Also write a gnuplot script.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    /// Corrupt the analytic gradients to confirm that the suites can fail.
    #[arg(long)]
    pub mutate: bool,
}
