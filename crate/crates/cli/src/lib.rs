//! Command-line front end: dataset generation, augmentation, training,
//! indexing, ranking, evaluation, benchmarking and embedding export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use jobmatch_core::augment::{
    augment_graph, AugmentPlan, EdaParams, EdaProvider, ParaphraseProvider, RemoteProvider, StubProvider,
    SynonymTable,
};
use jobmatch_core::corpus::{
    load_dataset, parse_dataset, serialize_documents, serialize_labels, split_dataset, DatasetSplit, DocKind,
    Document, InteractionGraph,
};
use jobmatch_core::encoder::{embed_documents, encode_document, ModelConfig, ModelParams, Schema};
use jobmatch_core::pipeline::{
    evaluate_graph, write_summary_csv, Bm25Scorer, EmbeddingScorer, EvalConfig, EvaluationReport, OracleScorer,
    PairScorer, RandomScorer, TfidfScorer,
};
use jobmatch_core::ranker::{bench_rank, write_bench_csv, Bm25Params, DenseIndex};
use jobmatch_core::synth::{generate, SyntheticSpec};
use jobmatch_core::trainer::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "jobmatch", version, about = "Person-job matching with a field-wise bi-encoder")]
pub struct Cli {
    /// JSON file with any of the sections synth, split, model, train, eval, eda, bm25.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic industry-clustered dataset.
    GenSynth(GenSynthArgs),
    /// Add paraphrased documents that inherit their source's labels.
    Augment(AugmentArgs),
    /// Split a dataset, train the encoder and save the best checkpoint.
    Train(TrainArgs),
    /// Embed every document of one kind into a flat index.
    Index(IndexArgs),
    /// Top-k candidates for one query document.
    Rank(RankArgs),
    /// Ranking and classification metrics on the held-out test labels.
    Eval(EvalArgs),
    /// Time exact top-k search over growing pool sizes.
    Bench(BenchArgs),
    /// Write `id<TAB>kind<TAB>v1 ... vd` lines.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Document records, one JSON object per line.
    #[arg(long)]
    pub docs: PathBuf,
    /// Label records, one JSON object per line.
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out_docs: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long)]
    pub n_industries: Option<usize>,
    #[arg(long)]
    pub resumes_per_industry: Option<usize>,
    #[arg(long)]
    pub jobs_per_industry: Option<usize>,
    #[arg(long)]
    pub cross_industry_noise: Option<f64>,
    #[arg(long)]
    pub accept_rate_within_industry: Option<f64>,
    #[arg(long)]
    pub specialty_pool: Option<usize>,
    #[arg(long)]
    pub specialties_per_document: Option<usize>,
    #[arg(long)]
    pub rejected_applications: Option<usize>,
    #[arg(long)]
    pub cross_industry_rejections: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Eda,
    Stub,
    Remote,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_docs: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub n_resumes: usize,
    #[arg(long, default_value_t = 0)]
    pub n_jobs: usize,
    /// Comma-separated resume fields to rewrite.
    #[arg(long, value_delimiter = ',')]
    pub resume_fields: Vec<String>,
    /// Comma-separated job fields to rewrite.
    #[arg(long, value_delimiter = ',')]
    pub job_fields: Vec<String>,
    /// Providers, assigned to sources round-robin.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "eda")]
    pub provider: Vec<ProviderKind>,
    /// Tab-separated synonym table for the EDA provider.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Prompt template containing `{{TEXT}}`.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Environment variable holding the endpoint's API key.
    #[arg(long, default_value = "JOBMATCH_API_KEY")]
    pub api_key_env: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Line-delimited JSON metrics per epoch.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Start from this checkpoint instead of a random init.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hard_negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    #[arg(long)]
    pub grad_accumulation: Option<usize>,
    /// Keep accepted in-batch collisions in the softmax denominators.
    #[arg(long)]
    pub no_collision_mask: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolKind {
    Resumes,
    Jobs,
}

impl PoolKind {
    fn kind(self) -> DocKind {
        match self {
            PoolKind::Resumes => DocKind::Resume,
            PoolKind::Jobs => DocKind::Job,
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, value_enum)]
    pub pool: PoolKind,
    #[arg(long)]
    pub out: PathBuf,
    /// L2-normalise embeddings before indexing.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Documents containing the query.
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum)]
    pub pool: PoolKind,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Model,
    Init,
    Bm25,
    Tfidf,
    Oracle,
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "model")]
    pub scorer: Vec<ScorerKind>,
    /// Required by the `model` scorer.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub normalize: bool,
    /// Summary CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full reports, including per-task metrics, as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Index to search; a random Gaussian index is generated when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub pools: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only this kind; both when absent.
    #[arg(long, value_enum)]
    pub pool: Option<PoolKind>,
    #[arg(long)]
    pub normalize: bool,
}

/// Held-out label counts for the train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n_val_labels: usize,
    pub n_test_labels: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_val_labels: 30, n_test_labels: 60, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SyntheticSpec,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub eda: EdaParams,
    pub bm25: Bm25Params,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.synth.seed = s;
            self.split.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = FileConfig::load(cli.config.as_deref())?;
    config.apply_seed(cli.seed);
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&config, a),
        Command::Augment(a) => cmd_augment(&config, a),
        Command::Train(a) => cmd_train(&config, a),
        Command::Index(a) => cmd_index(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Eval(a) => cmd_eval(&config, a),
        Command::Bench(a) => cmd_bench(&config, a),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

/// `{"error": ...}` for the failure line printed on stderr.
pub fn error_line(err: &anyhow::Error) -> String {
    let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
    serde_json::json!({ "error": chain.join(": ") }).to_string()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_graph(data: &DataArgs) -> Result<InteractionGraph> {
    let (docs, labels) = load_dataset(&data.docs, &data.labels)
        .with_context(|| format!("loading {} and {}", data.docs.display(), data.labels.display()))?;
    Ok(InteractionGraph::new(docs, labels)?)
}

fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (docs, labels) = parse_dataset(std::io::BufReader::new(file))?;
    if !labels.is_empty() {
        bail!("{} holds label records; pass the document file", path.display());
    }
    Ok(docs)
}

fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    ModelParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn split(config: &FileConfig, graph: &InteractionGraph) -> Result<DatasetSplit> {
    let s = config.split;
    Ok(split_dataset(graph, s.seed, s.n_val_labels, s.n_test_labels)?)
}

fn write_graph(graph: &InteractionGraph, docs: &Path, labels: &Path) -> Result<()> {
    write_file(docs, serialize_documents(graph.all_documents()).as_bytes())?;
    write_file(labels, serialize_labels(graph.edges()).as_bytes())
}

fn cmd_gen_synth(config: &FileConfig, a: GenSynthArgs) -> Result<()> {
    let mut spec = config.synth.clone();
    spec.n_industries = a.n_industries.unwrap_or(spec.n_industries);
    spec.resumes_per_industry = a.resumes_per_industry.unwrap_or(spec.resumes_per_industry);
    spec.jobs_per_industry = a.jobs_per_industry.unwrap_or(spec.jobs_per_industry);
    spec.cross_industry_noise = a.cross_industry_noise.unwrap_or(spec.cross_industry_noise);
    spec.accept_rate_within_industry = a.accept_rate_within_industry.unwrap_or(spec.accept_rate_within_industry);
    spec.specialty_pool = a.specialty_pool.unwrap_or(spec.specialty_pool);
    spec.specialties_per_document = a.specialties_per_document.unwrap_or(spec.specialties_per_document);
    spec.rejected_applications = a.rejected_applications.unwrap_or(spec.rejected_applications);
    spec.cross_industry_rejections = a.cross_industry_rejections.unwrap_or(spec.cross_industry_rejections);
    let ds = generate(&spec)?;
    write_file(&a.out_docs, serialize_documents(&ds.documents).as_bytes())?;
    write_file(&a.out_labels, serialize_labels(&ds.labels).as_bytes())
}

fn cmd_augment(config: &FileConfig, a: AugmentArgs) -> Result<()> {
    let graph = load_graph(&a.data)?;
    let mut owned: Vec<Box<dyn ParaphraseProvider>> = Vec::new();
    for p in &a.provider {
        owned.push(match p {
            ProviderKind::Eda => {
                let synonyms = match &a.synonyms {
                    Some(path) => SynonymTable::load(path)?,
                    None => SynonymTable::default(),
                };
                Box::new(EdaProvider::new(config.eda, synonyms)?)
            }
            ProviderKind::Stub => Box::new(StubProvider),
            ProviderKind::Remote => {
                let endpoint = a.endpoint.as_deref().ok_or_else(|| anyhow!("--endpoint is required for remote"))?;
                let template = a.template.as_deref().ok_or_else(|| anyhow!("--template is required for remote"))?;
                Box::new(RemoteProvider::from_files(endpoint, template, &a.api_key_env)?)
            }
        });
    }
    let providers: Vec<&dyn ParaphraseProvider> = owned.iter().map(|p| p.as_ref()).collect();
    let plan = AugmentPlan {
        n_aug_resumes: a.n_resumes,
        n_aug_jobs: a.n_jobs,
        target_fields_resume: a.resume_fields,
        target_fields_job: a.job_fields,
    };
    let (out, report) = augment_graph(&graph, &plan, &providers, config.train.seed)?;
    write_graph(&out, &a.out_docs, &a.out_labels)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_train(config: &FileConfig, a: TrainArgs) -> Result<()> {
    let graph = load_graph(&a.data)?;
    let split = split(config, &graph)?;
    let mut tc = config.train;
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.hard_negatives = a.hard_negatives.unwrap_or(tc.hard_negatives);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.base_lr = a.lr.unwrap_or(tc.base_lr);
    tc.warmup_frac = a.warmup_frac.unwrap_or(tc.warmup_frac);
    tc.weight_decay = a.weight_decay.unwrap_or(tc.weight_decay);
    tc.grad_accumulation = a.grad_accumulation.unwrap_or(tc.grad_accumulation);
    tc.mask_collisions = tc.mask_collisions && !a.no_collision_mask;

    let initial = match &a.init {
        Some(path) => load_checkpoint(path)?,
        // The schema comes from the whole collection so held-out documents
        // with extra fields still encode.
        None => ModelParams::init(config.model, Schema::from_documents(graph.all_documents()), tc.seed)?,
    };
    let mut log = a.log.as_deref().map(create).transpose()?;
    let (params, report) = train(&split.train, &split.val, initial, &tc, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    params.save(&a.out)?;
    let summary = serde_json::json!({
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "final_train_loss": report.final_train_loss(),
        "steps": report.steps,
        "train_labels": split.train.num_edges(),
        "dropped_labels": split.dropped,
    });
    println!("{summary}");
    Ok(())
}

fn embeddings_of(params: &ModelParams, docs: &[Document], kind: Option<DocKind>, normalize: bool) -> Result<Vec<jobmatch_core::encoder::Embedding>> {
    let selected = docs.iter().filter(|d| kind.is_none_or(|k| d.kind == k));
    let mut out = embed_documents(selected, params)?;
    if normalize {
        out = out.into_iter().map(|e| e.normalized()).collect();
    }
    Ok(out)
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let docs = load_documents(&a.docs)?;
    let embeddings = embeddings_of(&params, &docs, Some(a.pool.kind()), a.normalize)?;
    if embeddings.is_empty() {
        bail!("no {} documents in {}", a.pool.kind(), a.docs.display());
    }
    DenseIndex::build(&embeddings)?.save(&a.out)?;
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let index = DenseIndex::load(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    let pool = a.pool.kind();
    if index.kind().is_some_and(|k| k != pool) {
        bail!("index {} holds {} documents, not {}", a.index.display(), index.kind().unwrap(), pool);
    }
    let docs = load_documents(&a.docs)?;
    let query_kind = pool.opposite();
    let query = docs
        .iter()
        .find(|d| d.kind == query_kind && d.id == a.query)
        .ok_or_else(|| anyhow!("no {query_kind} `{}` in {}", a.query, a.docs.display()))?;
    let mut q = encode_document(query, &params)?;
    if a.normalize {
        q = q.normalized();
    }
    let mut out = std::io::stdout().lock();
    for (i, (id, score)) in index.top_k(&q.vector, a.k)?.into_iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, id, score)?;
    }
    Ok(())
}

fn build_scorer<'a>(
    kind: ScorerKind,
    config: &FileConfig,
    a: &EvalArgs,
    graph: &InteractionGraph,
    test: &'a InteractionGraph,
) -> Result<Box<dyn PairScorer + 'a>> {
    Ok(match kind {
        ScorerKind::Model => {
            let path = a.checkpoint.as_deref().ok_or_else(|| anyhow!("--checkpoint is required for the model scorer"))?;
            Box::new(EmbeddingScorer::new("model", &load_checkpoint(path)?, graph, a.normalize)?)
        }
        ScorerKind::Init => {
            let params = ModelParams::init(config.model, Schema::from_documents(graph.all_documents()), config.train.seed)?;
            Box::new(EmbeddingScorer::new("init", &params, graph, a.normalize)?)
        }
        ScorerKind::Bm25 => Box::new(Bm25Scorer::new(graph, config.bm25)?),
        ScorerKind::Tfidf => Box::new(TfidfScorer::new(graph)),
        ScorerKind::Oracle => Box::new(OracleScorer { graph: test }),
        ScorerKind::Random => Box::new(RandomScorer { seed: config.eval.seed }),
    })
}

fn cmd_eval(config: &FileConfig, a: EvalArgs) -> Result<()> {
    let graph = load_graph(&a.data)?;
    let split = split(config, &graph)?;
    let mut ec = config.eval;
    ec.q = a.q.unwrap_or(ec.q);
    let mut reports: Vec<EvaluationReport> = Vec::new();
    for &kind in &a.scorer {
        let scorer = build_scorer(kind, config, &a, &graph, &split.test)?;
        reports.push(evaluate_graph(&split.test, Some(&split.val), Some(&split.source), scorer.as_ref(), &ec)?);
    }
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_summary_csv(&mut w, &reports)?;
            w.flush()?;
        }
        None => write_summary_csv(std::io::stdout().lock(), &reports)?,
    }
    if let Some(path) = &a.json {
        write_file(path, serde_json::to_string_pretty(&reports)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(config: &FileConfig, a: BenchArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.eval.seed);
    let index = match &a.index {
        Some(path) => DenseIndex::load(path)?,
        None => {
            let data: Vec<f32> = (0..a.n * a.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            DenseIndex::from_rows((0..a.n).map(|i| format!("v{i}")).collect(), a.dim, data)?
        }
    };
    let queries: Vec<Vec<f32>> =
        (0..a.queries).map(|_| (0..index.dim()).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let rows = bench_rank(&index, &queries, &a.pools, a.k, a.runs)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            write_bench_csv(&mut w, &rows)?;
            w.flush()?;
        }
        None => write_bench_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let docs = load_documents(&a.docs)?;
    let embeddings = embeddings_of(&params, &docs, a.pool.map(PoolKind::kind), a.normalize)?;
    let mut w = create(&a.out)?;
    for e in &embeddings {
        write!(w, "{}\t{}", e.id, e.kind)?;
        for v in &e.vector {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
