use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ragtrim::analytics::{
    entropy_accuracy_curve, feature_rows, fit_ols, similarity_accuracy_curve, text_length_histogram,
    write_curve_csv, write_histogram_csv, write_regression_csv,
};
use ragtrim::compression::{random_delete, semantic_compress, summarize_compress, CompressionResult, Percentile};
use ragtrim::corpus::{load_knowledge, load_qa, save_knowledge, CorpusError, KnowledgeBase};
use ragtrim::cost::{format_sci, question_cost, Pipeline as CostPipeline, PricingTable, QuestionTokens};
use ragtrim::embedding::{index_build, EmbeddingProviderSpec, VectorIndex};
use ragtrim::eval::{compression_grid, read_records, EvalError, EvalOutcome, Pipeline, PipelineConfig};
use ragtrim::llm::{ChatSpec, SummaryStubMode};
use ragtrim::retrieval::{Method, NspConfig, RetrievalConfig, Retriever};
use ragtrim::selfinstruct::{generate_dataset, write_dataset, GenRecord, GenSpec, SplitSizes};
use ragtrim::text::{build_frequency_model, SegmenterKind, TokenCounter};

/// Retrieval-augmented QA with context compression and cost accounting.
#[derive(Debug, Parser)]
#[command(name = "ragtrim", version, arg_required_else_help = true)]
struct Cli {
    /// Emit machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice (sampling, random deletion).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a knowledge base (and QA set) and report length statistics.
    Ingest(IngestArgs),
    /// Embed a knowledge base into a vector index file.
    Index(IndexArgs),
    /// Rank knowledge documents for a query.
    Retrieve(RetrieveArgs),
    /// Compress one text.
    Compress(CompressArgs),
    /// Generate multi-level summarization training data.
    GenSumData(GenArgs),
    /// Evaluate the QA pipeline described by a run config.
    Eval(EvalArgs),
    /// Price one question under a pricing table.
    Cost(CostArgs),
    /// Aggregate evaluation or generation records into CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Write the validated knowledge base back out as JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbeddingArgs {
    /// Dimension of the built-in hashing embedder.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// TOML file with an embedding provider spec (overrides --dim).
    #[arg(long)]
    embedding: Option<PathBuf>,
}

impl EmbeddingArgs {
    fn spec(&self) -> Result<EmbeddingProviderSpec, Failure> {
        match &self.embedding {
            Some(p) => read_toml(p),
            None => Ok(EmbeddingProviderSpec::ReferenceHash { dim: self.dim }),
        }
    }
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long, default_value = "dense")]
    method: Method,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// First-stage pool for cascades.
    #[arg(long, default_value_t = 10)]
    q: usize,
    /// Also run NSP selection over the hits.
    #[arg(long)]
    nsp: bool,
    /// Prebuilt vector index.
    #[arg(long)]
    index: Option<PathBuf>,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CompressMethod {
    Semantic,
    Random,
    Summarize,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    text: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: CompressMethod,
    /// Percentile for semantic compression.
    #[arg(long, default_value_t = 50.0)]
    j: f64,
    /// Deletion ratio (random) or target length ratio (summarize).
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value = "cjk-char")]
    segmenter: SegmenterKind,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StubMode {
    Budget,
    Halve,
    Echo,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 400)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[arg(long, default_value_t = 0.10)]
    tolerance: f64,
    #[arg(long, default_value_t = 5)]
    max_rounds: u32,
    /// Sample new source documents for every ratio.
    #[arg(long)]
    resample: bool,
    /// TOML chat spec; an offline stub is used when absent.
    #[arg(long)]
    chat: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "budget")]
    stub: StubMode,
    #[arg(long, default_value = "cjk-char")]
    segmenter: SegmenterKind,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    qa: Option<PathBuf>,
    /// Append per-question records here (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip questions already recorded in --out.
    #[arg(long, requires = "out")]
    resume: bool,
    /// Evaluate once per k instead of once.
    #[arg(long, value_delimiter = ',')]
    sweep_k: Vec<usize>,
    /// Evaluate once per method × ratio (methods: none, semantic, random, summarize).
    #[arg(long, value_delimiter = ',')]
    sweep_methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    sweep_ratios: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CostPipelineArg {
    Plain,
    Compressed,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Pricing table file; `.toml` may be omitted.
    #[arg(long)]
    pricing: Option<PathBuf>,
    #[arg(long)]
    query_tokens: Option<f64>,
    #[arg(long)]
    context_tokens: Option<f64>,
    #[arg(long)]
    output_tokens: Option<f64>,
    /// Fraction of context tokens left after compression.
    #[arg(long)]
    context_ratio: Option<f64>,
    #[arg(long, value_enum, default_value = "plain")]
    pipeline: CostPipelineArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Analysis {
    EntropyAccuracy,
    SimilarityAccuracy,
    LengthHistogram,
    Regression,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long, value_enum)]
    what: Analysis,
    /// Evaluation records, or generation records for `regression` and
    /// `length-histogram`.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Knowledge base: entropy model source, or texts to histogram.
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bin_width: usize,
    /// Use unsmoothed word probabilities.
    #[arg(long)]
    no_smoothing: bool,
    #[arg(long, default_value = "cjk-char")]
    segmenter: SegmenterKind,
    #[command(flatten)]
    embedding: EmbeddingArgs,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit 1 for bad input, 2 for failures while running.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure::Usage(e.into())
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn corpus_failure(e: CorpusError) -> Failure {
    match e {
        CorpusError::Io { .. } => Failure::runtime(e),
        _ => Failure::usage(e),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Io { .. } => Failure::runtime(e),
        _ => Failure::usage(e),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let src = fs::read_to_string(path).with_context(|| path.display().to_string()).map_err(Failure::runtime)?;
    toml::from_str(&src).with_context(|| path.display().to_string()).map_err(Failure::usage)
}

fn load_kb(path: &Path) -> CliResult<KnowledgeBase> {
    load_knowledge(path).map_err(corpus_failure)
}

fn emit(text: &str) -> CliResult {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(Failure::runtime)
}

fn emit_json(value: &impl serde::Serialize) -> CliResult {
    emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn write_or_print(out: Option<&Path>, content: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, content).with_context(|| p.display().to_string()).map_err(Failure::runtime),
        None => emit(content),
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> CliResult {
    let kb = load_kb(&a.knowledge)?;
    let qa = a.qa.as_ref().map(|p| load_qa(p).map_err(corpus_failure)).transpose()?;
    let stats = kb.stats();
    if let Some(out) = &a.out {
        save_knowledge(&kb, out).map_err(corpus_failure)?;
    }
    if cli.json {
        return emit_json(&json!({ "documents": stats.count, "words": stats, "qa_items": qa.as_ref().map(Vec::len) }));
    }
    let mut s = format!(
        "documents  {}\nwords      mean {:.2}  max {}  min {}  std {:.2}\n",
        stats.count, stats.mean, stats.max, stats.min, stats.std
    );
    if let Some(qa) = qa {
        s.push_str(&format!("qa items   {}\n", qa.len()));
    }
    emit(&s)
}

fn index(cli: &Cli, a: &IndexArgs) -> CliResult {
    let kb = load_kb(&a.knowledge)?;
    let provider = a.embedding.spec()?.build().map_err(Failure::usage)?;
    let idx = index_build(&kb, provider.as_ref()).map_err(Failure::runtime)?;
    idx.save(&a.out).map_err(Failure::runtime)?;
    if cli.json {
        return emit_json(&json!({ "entries": idx.len(), "dim": idx.dim(), "path": a.out }));
    }
    emit(&format!("indexed {} documents (dim {}) -> {}\n", idx.len(), idx.dim(), a.out.display()))
}

fn retrieve(cli: &Cli, a: &RetrieveArgs) -> CliResult {
    let kb = load_kb(&a.knowledge)?;
    let provider = a.embedding.spec()?.build().map_err(Failure::usage)?;
    let cfg = RetrievalConfig {
        method: a.method,
        k: a.k,
        q: a.q,
        nsp: NspConfig { enabled: a.nsp, ..NspConfig::default() },
        ..RetrievalConfig::default()
    };
    cfg.validate().map_err(Failure::usage)?;
    let retriever = match &a.index {
        Some(p) => Retriever::with_index(kb, VectorIndex::load(p).map_err(Failure::runtime)?, provider),
        None => Retriever::new(kb, provider),
    }
    .map_err(Failure::usage)?;
    let scorer = cfg.nsp.scorer.build();
    let ctx = retriever.retrieve_context(&cfg, &a.query, scorer.as_ref()).map_err(Failure::runtime)?;
    if cli.json {
        return emit_json(&ctx);
    }
    let mut s = String::new();
    for h in &ctx.hits.hits {
        s.push_str(&format!("{}\t{:.6}\n", h.doc_id, h.score));
    }
    if let Some(sel) = &ctx.nsp {
        s.push_str(&format!("selected\t{}\n", sel.selected));
    }
    emit(&s)
}

fn compress(cli: &Cli, a: &CompressArgs) -> CliResult {
    let text = match (&a.text, &a.file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => fs::read_to_string(p).with_context(|| p.display().to_string()).map_err(Failure::runtime)?,
        (None, None) => return Err(Failure::usage(anyhow!("pass --text or --file"))),
    };
    let seg = a.segmenter.segmenter();
    let result: CompressionResult = match a.method {
        CompressMethod::Semantic => {
            let provider = a.embedding.spec()?.build().map_err(Failure::usage)?;
            let j = Percentile::new(a.j).map_err(Failure::usage)?;
            semantic_compress(&text, j, seg, provider.as_ref())
        }
        CompressMethod::Random => random_delete(&text, a.ratio, cli.seed.unwrap_or(0), seg),
        CompressMethod::Summarize => {
            let summarizer = ragtrim::compression::TruncatingSummarizer { segmenter: a.segmenter };
            summarize_compress(&text, a.ratio, &summarizer, seg)
        }
    }
    .map_err(Failure::usage)?;
    if cli.json {
        return emit_json(&result);
    }
    emit(&format!("{}\n", result.compressed_text))?;
    eprintln!("kept {}/{} words (ratio {:.4})", result.retained_words.len(), result.original.n(), result.achieved_ratio);
    Ok(())
}

fn gen_sum_data(cli: &Cli, a: &GenArgs) -> CliResult {
    let kb = load_kb(&a.knowledge)?;
    let chat: ChatSpec = match &a.chat {
        Some(p) => read_toml(p)?,
        None => ChatSpec::stub_summary(match a.stub {
            StubMode::Budget => SummaryStubMode::Budget,
            StubMode::Halve => SummaryStubMode::Halve,
            StubMode::Echo => SummaryStubMode::Echo,
        }),
    };
    let spec = GenSpec {
        target_ratios: a.ratios.clone(),
        tolerance: a.tolerance,
        max_rounds: a.max_rounds,
        split_sizes: SplitSizes { train: a.train, val: a.val, test: a.test },
        seed: cli.seed.unwrap_or(0),
        resample_per_ratio: a.resample,
        segmenter: a.segmenter,
        ..GenSpec::default()
    };
    spec.validate().map_err(Failure::usage)?;
    let llm = chat.client(TokenCounter::default());
    let ds = generate_dataset(&kb, &spec, &llm).map_err(|e| match e {
        ragtrim::selfinstruct::GenError::InsufficientCorpus { .. } | ragtrim::selfinstruct::GenError::TooShort { .. } => {
            Failure::usage(e)
        }
        _ => Failure::runtime(e),
    })?;
    write_dataset(&ds, &a.out).map_err(Failure::runtime)?;
    if cli.json {
        return emit_json(&ds.manifest);
    }
    let mut s = String::from("ratio  records  accepted  rate    mean_rounds\n");
    for r in &ds.manifest.ratios {
        s.push_str(&format!(
            "{:<6} {:<8} {:<9} {:<7.3} {:.2}\n",
            r.ratio, r.records, r.accepted, r.acceptance_rate, r.mean_rounds
        ));
    }
    emit(&s)
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(eval_failure)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = &a.knowledge {
        cfg.knowledge = Some(k.clone());
    }
    if let Some(q) = &a.qa {
        cfg.qa = Some(q.clone());
    }
    if let (Some(seed), ragtrim::compression::CompressionConfig::Random { ratio, .. }) = (cli.seed, cfg.compression) {
        cfg.compression = ragtrim::compression::CompressionConfig::Random { ratio, seed };
    }
    let kb_path = cfg.knowledge.clone().ok_or_else(|| Failure::usage(anyhow!("no knowledge base (--knowledge)")))?;
    let qa_path = cfg.qa.clone().ok_or_else(|| Failure::usage(anyhow!("no QA set (--qa)")))?;
    let kb = load_kb(&kb_path)?;
    let qa = load_qa(&qa_path).map_err(corpus_failure)?;
    let pipeline = Pipeline::new(kb, cfg).map_err(eval_failure)?;

    let outcomes: Vec<EvalOutcome> = if !a.sweep_k.is_empty() {
        pipeline.sweep_k(&qa, &a.sweep_k).map_err(eval_failure)?.into_iter().map(|(_, o)| o).collect()
    } else if !a.sweep_methods.is_empty() {
        let methods: Vec<&str> = a.sweep_methods.iter().map(String::as_str).collect();
        let grid = compression_grid(&methods, &a.sweep_ratios, cli.seed.unwrap_or(0)).map_err(eval_failure)?;
        pipeline.sweep_compression(&qa, &grid).map_err(eval_failure)?
    } else {
        let setting = pipeline.config().setting();
        let outcome = match &a.out {
            Some(p) => pipeline.evaluate_to_file(&qa, &setting, p, a.resume),
            None => pipeline.evaluate_setting(&qa, &setting),
        }
        .map_err(eval_failure)?;
        vec![outcome]
    };
    let sweep = outcomes.len() > 1 || !a.sweep_k.is_empty() || !a.sweep_methods.is_empty();
    if sweep {
        if let Some(p) = &a.out {
            let all: Vec<_> = outcomes.iter().flat_map(|o| o.records.clone()).collect();
            write_or_print(Some(p), &ragtrim::eval::records_to_jsonl(&all))?;
        }
    }
    let summaries: Vec<_> = outcomes.iter().map(|o| &o.summary).collect();
    if cli.json {
        return if summaries.len() == 1 { emit_json(summaries[0]) } else { emit_json(&summaries) };
    }
    let mut s = String::new();
    for sm in summaries {
        s.push_str(&format!("{sm}\n"));
    }
    emit(&s)
}

fn cost(cli: &Cli, a: &CostArgs) -> CliResult {
    let table = match &a.pricing {
        Some(p) => PricingTable::load(p).map_err(|e| match e {
            ragtrim::cost::CostError::Io { .. } => Failure::runtime(e),
            _ => Failure::usage(e),
        })?,
        None => PricingTable::builtin(),
    };
    let scenario = table.scenario;
    let pick = |given: Option<f64>, fallback: Option<f64>, name: &str| {
        given.or(fallback).ok_or_else(|| Failure::usage(anyhow!("--{name} is required: the table has no scenario")))
    };
    let tokens = QuestionTokens {
        query: pick(a.query_tokens, scenario.map(|s| s.query_tokens), "query-tokens")?,
        context: pick(a.context_tokens, scenario.map(|s| s.context_tokens), "context-tokens")?,
        output: pick(a.output_tokens, scenario.map(|s| s.output_tokens), "output-tokens")?,
    };
    let pipeline = match a.pipeline {
        CostPipelineArg::Plain => CostPipeline::PlainRag,
        CostPipelineArg::Compressed => CostPipeline::CompressedRag {
            context_ratio: pick(a.context_ratio, scenario.map(|s| s.context_ratio), "context-ratio")?,
        },
    };
    let compute = table.compute().map_err(Failure::usage)?;
    let report = question_cost(tokens, pipeline, &table, &compute).map_err(Failure::usage)?;
    if cli.json {
        return emit_json(&json!({ "pricing": table.name, "report": report, "total_display": format_sci(report.total, 4) }));
    }
    emit(&format!("pricing             {}\n{report}", table.name))
}

fn analyze(_cli: &Cli, a: &AnalyzeArgs) -> CliResult {
    let seg = a.segmenter.segmenter();
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| Failure::usage(anyhow!("--{flag} is required for this analysis")))
    };
    let mut buf = Vec::new();
    match a.what {
        Analysis::EntropyAccuracy => {
            let kb = load_kb(&need(&a.knowledge, "knowledge")?)?;
            let records = read_records(need(&a.records, "records")?).map_err(eval_failure)?;
            let model = build_frequency_model(&kb, seg, !a.no_smoothing).map_err(Failure::usage)?;
            let points = entropy_accuracy_curve(&records, &model, seg).map_err(Failure::runtime)?;
            write_curve_csv(&mut buf, "mean_entropy_bits", &points).map_err(Failure::runtime)?;
        }
        Analysis::SimilarityAccuracy => {
            let records = read_records(need(&a.records, "records")?).map_err(eval_failure)?;
            let provider = a.embedding.spec()?.build().map_err(Failure::usage)?;
            let points = similarity_accuracy_curve(&records, provider.as_ref()).map_err(Failure::runtime)?;
            write_curve_csv(&mut buf, "mean_cosine", &points).map_err(Failure::runtime)?;
        }
        Analysis::LengthHistogram => {
            let texts: Vec<String> = match (&a.records, &a.knowledge) {
                (Some(p), _) => read_gen_records(p)?.into_iter().map(|r| r.summary).collect(),
                (None, Some(k)) => load_kb(k)?.documents().iter().map(|d| d.text.clone()).collect(),
                (None, None) => return Err(Failure::usage(anyhow!("pass --records or --knowledge"))),
            };
            let bins = text_length_histogram(texts.iter().map(String::as_str), seg, a.bin_width).map_err(Failure::usage)?;
            write_histogram_csv(&mut buf, &bins).map_err(Failure::runtime)?;
        }
        Analysis::Regression => {
            let kb = load_kb(&need(&a.knowledge, "knowledge")?)?;
            let records = read_gen_records(&need(&a.records, "records")?)?;
            let model = build_frequency_model(&kb, seg, !a.no_smoothing).map_err(Failure::usage)?;
            let fit = fit_ols(&feature_rows(&records, &model, seg)).map_err(Failure::usage)?;
            write_regression_csv(&mut buf, &fit).map_err(Failure::runtime)?;
        }
    }
    write_or_print(a.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

fn read_gen_records(path: &Path) -> CliResult<Vec<GenRecord>> {
    let src = fs::read_to_string(path).with_context(|| path.display().to_string()).map_err(Failure::runtime)?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}", path.display(), i + 1))
                .map_err(Failure::usage)
        })
        .collect()
}

/// The error chain, skipping causes a previous message already includes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Index(a) => index(cli, a),
        Command::Retrieve(a) => retrieve(cli, a),
        Command::Compress(a) => compress(cli, a),
        Command::GenSumData(a) => gen_sum_data(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Cost(a) => cost(cli, a),
        Command::Analyze(a) => analyze(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
