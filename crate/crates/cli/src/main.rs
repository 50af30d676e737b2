mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plex_core::explainers::Method;
use plex_core::PlexError;

/// Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric divergence.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<PlexError> for Failure {
    fn from(e: PlexError) -> Self {
        let numeric = e.is_numeric();
        Failure {
            code: if numeric { 3 } else { 2 },
            kind: if numeric { "numeric" } else { "data" },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        PlexError::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        PlexError::from(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure {
            code: 2,
            kind: "data",
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "plex",
    version,
    about = "Single-pass word-importance explanations"
)]
struct Cli {
    /// key=value settings applied after (and overriding) command-line flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a text corpus (or validate a bridge export) into embedding JSONL
    Encode(EncodeArgs),
    /// Train the softmax head on labelled CLS embeddings
    TrainHead(TrainHeadArgs),
    /// Label every word with a perturbation explainer and write training pairs
    BuildDataset(BuildDatasetArgs),
    /// Train the Siamese scorer on a pair file
    TrainPlex(TrainPlexArgs),
    /// Explain sentences with one method
    Explain(ExplainArgs),
    /// Deletion stress test
    Stress(StressArgs),
    /// Top-k and polarity agreement between two score files
    Agree(AgreeArgs),
    /// Polarity agreement at one threshold
    Polarity(PolarityArgs),
    /// Wall time, FLOPs and encoder passes per sentence-length bucket
    Bench(BenchArgs),
    /// Per-layer CLS-to-word distances
    LayerHeatmap(LayerHeatmapArgs),
}

#[derive(Args, Clone, Debug)]
pub struct ToyArgs {
    /// Seed of the built-in toy encoder
    #[arg(long, default_value_t = 0)]
    pub toy_seed: u64,
    /// Hidden size of the toy encoder (feed-forward width is twice this)
    #[arg(long, default_value_t = 32)]
    pub toy_dim: usize,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct EncodeArgs {
    /// Corpus JSONL ({"id","text","label"?}), or interchange JSONL with --from-bridge
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Input is already interchange JSONL from the exporter; validate and rewrite it
    #[arg(long, conflicts_with = "toy_seed")]
    pub from_bridge: bool,
    /// Drop per-layer vectors from the output
    #[arg(long)]
    pub no_layers: bool,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct TrainHeadArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes (default: largest label + 1)
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value = "lime")]
    pub explainer: Method,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Masked predictions recorded by the exporter, used instead of re-encoding
    #[arg(long, value_name = "FILE")]
    pub masked: Option<PathBuf>,
    /// Replace removed words with [mask] instead of deleting them
    #[arg(long)]
    pub mask_token: bool,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct TrainPlexArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Dropout rate on the hidden layer; 0 disables it
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Write per-epoch training loss as CSV
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct ExplainArgs {
    /// Raw sentence to explain (encoded with the toy encoder)
    #[arg(long, conflicts_with = "emb")]
    pub sentence: Option<String>,
    /// Embedding JSONL; every record is explained
    #[arg(long)]
    pub emb: Option<PathBuf>,
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Siamese parameters (plex method)
    #[arg(long)]
    pub plex: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub masked: Option<PathBuf>,
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Scores JSONL (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub html: Option<PathBuf>,
    /// Print a coloured rendering to stdout
    #[arg(long)]
    pub ansi: bool,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct StressArgs {
    /// Test sentences (toy-encoded embedding JSONL)
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub method: Method,
    #[arg(long, default_value_t = 4)]
    pub kmax: usize,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub plex: Option<PathBuf>,
    /// Precomputed scores to use instead of running the explainer
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct AgreeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05")]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct PolarityArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    /// Sentences to time (toy-encoded embedding JSONL)
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "plex,lime")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
    pub budgets: Vec<usize>,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub plex: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV table (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
pub struct LayerHeatmapArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only this sentence
    #[arg(long)]
    pub id: Option<String>,
}

fn init_threads() -> CliResult {
    if let Ok(v) = std::env::var("PLEX_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Failure::usage(format!(
                "PLEX_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        if n == 0 {
            return Err(Failure::usage("PLEX_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn run() -> CliResult {
    let args = config::expand(std::env::args().collect()).map_err(Failure::usage)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::usage(e.render().to_string().trim().to_string()));
        }
    };
    init_threads()?;
    match cli.command {
        Command::Encode(a) => commands::encode(a),
        Command::TrainHead(a) => commands::train_head(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::TrainPlex(a) => commands::train_plex(a),
        Command::Explain(a) => commands::explain(a),
        Command::Stress(a) => commands::stress(a),
        Command::Agree(a) => commands::agree(a),
        Command::Polarity(a) => commands::polarity(a),
        Command::Bench(a) => commands::bench(a),
        Command::LayerHeatmap(a) => commands::layer_heatmap(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let err = serde_json::json!({ "error": f.kind, "code": f.code, "message": f.message });
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}
