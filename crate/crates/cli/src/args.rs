use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "relcap", version, about = "Dense relational captioning pipelines")]
pub struct Cli {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Model variant, e.g. `mttsnet,mtl,rem`, `tsnet` or `union,mtl`.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Regions kept per image after non-maximum suppression.
    #[arg(long, global = true)]
    pub keep_after_nms: Option<usize>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shapes dataset with train/val/test splits.
    GenToy(GenToyArgs),
    /// Train a model; resumable from the checkpoint in the output directory.
    Train(TrainArgs),
    /// Caption a labelled split and compute the evaluation report.
    Eval(EvalArgs),
    /// Write captions for every detected region pair as JSON lines.
    Infer(InferArgs),
    /// Build caption graphs from predictions.
    Graph(GraphArgs),
    /// Sentence-based image retrieval.
    Retrieve(RetrieveArgs),
    /// Prefix relation endpoints with annotated attributes.
    Enrich(EnrichArgs),
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `gen-toy`; supplies train.jsonl and provider.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub provider: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from `<out>/model.ckpt` when it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled JSON-lines dataset.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON report; the text table goes next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Output directory for `graph_<image>.dot` / `.json` and `graphs.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub image: Option<u64>,
    #[arg(long)]
    pub merge_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated K values for recall@K.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Images ranked per query.
    #[arg(long)]
    pub images: Option<usize>,
    /// Rank every image for one sentence instead of running the protocol.
    #[arg(long)]
    pub query: Option<String>,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    #[arg(long)]
    pub relations: PathBuf,
    #[arg(long)]
    pub attributes: PathBuf,
    /// `word<TAB>tag` part-of-speech lexicon.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
