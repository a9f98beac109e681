//! `stance`: batch runner for user-level stance prediction experiments.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "stance", version, about = "Predict, evaluate and analyze user-level stance")]
pub struct Cli {
    /// TOML file supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic planted-signal corpus
    Synth(SynthArgs),
    /// Predict stances and write predictions JSONL
    Predict(PredictArgs),
    /// Train a baseline model per target
    Train(TrainArgs),
    /// Tune per-target thresholds from scored predictions
    TuneThreshold(TuneArgs),
    /// Score predictions against corpus labels
    Evaluate(EvaluateArgs),
    /// Score methods across tweets-per-user budgets
    Sweep(SweepArgs),
    /// Correlate keywords and lexicon scores with stance
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated target ids; defaults to every labelled target
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    /// all, train or test
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct LlmArgs {
    #[arg(long)]
    pub llm_base_url: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Mock policy as inline JSON or a path to a JSON file
    #[arg(long)]
    pub mock_policy: Option<String>,
    /// JSONL response cache
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Maximum in-flight LLM requests
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_users: usize,
    #[arg(long, default_value_t = 60)]
    pub tweets_per_user: usize,
    #[arg(long, default_value_t = 5)]
    pub specific_per_target: usize,
    #[arg(long, default_value_t = 0.5)]
    pub support_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    pub keyword_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lexicon_base_rate: f64,
    #[arg(long)]
    pub lexicon_target: Option<String>,
    /// `dimension=delta`, the Against-minus-Support rate; repeatable
    #[arg(long)]
    pub lexicon_effect: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// llm, llm-pooled, tfidf-logreg, embed-logreg or embed-ranfor
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub n_tweets: Option<usize>,
    /// agnostic or specific
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trained model file for baseline methods
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Per-target thresholds JSON
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// tfidf or embed
    #[arg(long, default_value = "tfidf")]
    pub features: String,
    /// logreg or ranfor
    #[arg(long, default_value = "logreg")]
    pub model: String,
    #[arg(long)]
    pub n_tweets: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Comma-separated methods
    #[arg(long, value_delimiter = ',', default_value = "llm-pooled")]
    pub methods: Vec<String>,
    /// Comma-separated tweets-per-user budgets, ascending
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,50")]
    pub n_grid: Vec<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trained model files; one per trained method
    #[arg(long)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Lexicon CSV (`word,dimension,weight`); the bundled one if absent
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Fail::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(commands::Fail::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
