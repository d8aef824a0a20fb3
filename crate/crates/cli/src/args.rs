use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const CONFIG_ENV: &str = "STRANK_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "strank", version, about = "Summarize-then-rank reranking for long documents")]
pub struct Cli {
    /// Pipeline config (TOML). Its values are the defaults for every verb;
    /// flags override them.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic long-document collection.
    Synth(SynthArgs),
    /// Build a BM25 index over a corpus.
    Index(IndexArgs),
    /// BM25 first-stage retrieval.
    Retrieve(RetrieveArgs),
    /// Summarize every retrieved document for its query.
    Summarize(SummarizeArgs),
    /// Sliding-window listwise reranking over summaries.
    Rerank(RerankArgs),
    /// NDCG and MAP of a run against qrels.
    Eval(EvalArgs),
    /// Build fixed-size labeled candidate lists for policy training.
    BuildRlData(BuildRlDataArgs),
    /// Behavior cloning of the extractive teacher.
    Sft(SftArgs),
    /// Rank-driven policy optimization.
    TrainGrpo(TrainGrpoArgs),
    /// Run retrieve, summarize, rerank and eval from the config file.
    Pipeline(PipelineArgs),
    /// Serve summarization, reranking and evaluation over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 80)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub heldout: usize,
    #[arg(long, default_value_t = 200)]
    pub background_docs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SummarizerKind {
    Firstp,
    Policy,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankerKind {
    Oracle,
    Lexical,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct SummarizerFlags {
    /// Summarizer backend; defaults to the config's.
    #[arg(long = "summarizer")]
    pub kind: Option<SummarizerKind>,
    /// Leading tokens kept by `firstp`.
    #[arg(long)]
    pub firstp_k: Option<usize>,
    /// Policy checkpoint for `policy`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Prompt template for `remote`.
    #[arg(long)]
    pub summarize_template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Index directory; also provides the documents.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub summarizer: SummarizerFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub backend: Option<RerankerKind>,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub summaries: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Needed by the oracle backend.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Index directory for idf weights of the lexical backend.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Prompt template for the remote backend.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    Linear,
    Exponential,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub ndcg_k: Option<usize>,
    #[arg(long)]
    pub map_k: Option<usize>,
    #[arg(long)]
    pub gain: Option<GainArg>,
    /// Per-query scores as TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildRlDataArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fill background summaries by greedy decoding of this checkpoint.
    #[arg(long)]
    pub background: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SftArgs {
    #[arg(long)]
    pub rl_data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainGrpoArgs {
    #[arg(long)]
    pub rl_data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    /// Held-out instances; without it a seeded share of `--rl-data` is held out.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub heldout_fraction: f64,
    #[arg(long)]
    pub reranker: Option<RerankerKind>,
    #[arg(long = "G")]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Overrides the config's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Index directory for idf features and lexical reranking.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    pub summarizer: SummarizerFlags,
    #[arg(long)]
    pub reranker: Option<RerankerKind>,
    /// Qrels for the oracle reranker.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
}
