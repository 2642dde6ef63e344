//! End-to-end multiple-choice evaluation: retrieve, compress, prompt,
//! complete, parse, score, and price every question.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{CompressionConfig, Summarizer, SummarizerSpec};
use crate::corpus::{KnowledgeBase, QaItem};
use crate::cost::{api_call_cost, retrieval_cost, summarization_compute_cost, ComputeCostSpec, PricingTable, QuestionCost};
use crate::embedding::{EmbeddingProvider, EmbeddingProviderSpec, VectorIndex};
use crate::llm::{build_prompt, parse_answer, ChatSpec, LlmClient, PromptTemplate};
use crate::retrieval::{apply_nsp, NspCandidate, NspScore, NspScorer, RetrievalConfig, Retriever};
use crate::text::{SegmenterKind, TokenCounter};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("QA set is empty; nothing to evaluate")]
    EmptyQaSet,
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: unreadable record: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Where compression happens relative to NSP selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressStage {
    /// Compress every retrieved candidate, then let NSP choose among them.
    PreNsp,
    /// Compress only the documents that enter the prompt.
    #[default]
    PostNsp,
}

/// The parts of a run that vary within a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub retrieval_enabled: bool,
    pub retrieval: RetrievalConfig,
    pub compression: CompressionConfig,
    pub compress_stage: CompressStage,
}

impl Setting {
    pub fn label(&self) -> String {
        let retrieval = if self.retrieval_enabled {
            let r = &self.retrieval;
            let nsp = if r.nsp.enabled { "+nsp" } else { "" };
            format!("{}:k={}{nsp}", r.method, r.k)
        } else {
            "no_retrieval".to_string()
        };
        let stage = match (self.compression, self.compress_stage) {
            (CompressionConfig::None, _) | (_, CompressStage::PostNsp) => "",
            (_, CompressStage::PreNsp) => "@pre_nsp",
        };
        format!("{retrieval}/{}{stage}", self.compression.label())
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.retrieval_enabled {
            self.retrieval.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        }
        self.compression.validate().map_err(|e| EvalError::Config(e.to_string()))
    }
}

/// A full run description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub knowledge: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    /// Prebuilt vector index; built in memory when absent.
    pub index: Option<PathBuf>,
    pub segmenter: SegmenterKind,
    pub token_counter: TokenCounter,
    pub embedding: EmbeddingProviderSpec,
    pub retrieval_enabled: bool,
    pub retrieval: RetrievalConfig,
    pub compression: CompressionConfig,
    pub compress_stage: CompressStage,
    pub summarizer: SummarizerSpec,
    pub llm: ChatSpec,
    /// `en`, `zh`, or a template file path.
    pub template: String,
    /// Pricing table path; the shipped table when absent.
    pub pricing: Option<PathBuf>,
    /// Questions evaluated concurrently.
    pub concurrency: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            knowledge: None,
            qa: None,
            index: None,
            segmenter: SegmenterKind::CjkChar,
            token_counter: TokenCounter::default(),
            embedding: EmbeddingProviderSpec::default(),
            retrieval_enabled: true,
            retrieval: RetrievalConfig::default(),
            compression: CompressionConfig::None,
            compress_stage: CompressStage::PostNsp,
            summarizer: SummarizerSpec::default(),
            llm: ChatSpec::stub_context_echo(),
            template: "en".into(),
            pricing: None,
            concurrency: 4,
        }
    }
}

impl PipelineConfig {
    pub fn parse(source: &str) -> Result<Self, EvalError> {
        toml::from_str(source).map_err(|e| EvalError::Config(e.to_string()))
    }

    /// Relative paths in the file resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&src)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.knowledge, &mut cfg.qa, &mut cfg.index, &mut cfg.pricing].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if !matches!(cfg.template.as_str(), "en" | "zh") && Path::new(&cfg.template).is_relative() {
            cfg.template = base.join(&cfg.template).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn setting(&self) -> Setting {
        Setting {
            retrieval_enabled: self.retrieval_enabled,
            retrieval: self.retrieval.clone(),
            compression: self.compression,
            compress_stage: self.compress_stage,
        }
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate, EvalError> {
        match self.template.as_str() {
            "en" => Ok(PromptTemplate::english()),
            "zh" => Ok(PromptTemplate::chinese()),
            path => PromptTemplate::load(path).map_err(|e| EvalError::Config(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qa_id: String,
    pub setting: String,
    pub retrieved: Vec<String>,
    pub nsp_scores: Vec<NspScore>,
    /// Documents in the prompt, in order.
    pub selected: Vec<String>,
    pub context_original: String,
    pub context_compressed: String,
    /// Mean achieved ratio over compressed documents.
    pub achieved_ratio: Option<f64>,
    pub prompt: String,
    pub reply: Option<String>,
    pub parsed: Option<u8>,
    pub answer: u8,
    pub correct: bool,
    pub query_tokens: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub summarization_calls: u32,
    pub cost: QuestionCost,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub setting: String,
    pub questions: usize,
    pub correct: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub mean_achieved_ratio: Option<f64>,
    /// Sum of per-question costs in record order.
    pub cost: QuestionCost,
}

impl EvalSummary {
    pub fn from_records(setting: &str, records: &[EvalRecord]) -> Self {
        let questions = records.len();
        let correct = records.iter().filter(|r| r.correct).count();
        let ratios: Vec<f64> = records.iter().filter_map(|r| r.achieved_ratio).collect();
        EvalSummary {
            setting: setting.to_string(),
            questions,
            correct,
            errors: records.iter().filter(|r| r.error.is_some()).count(),
            accuracy: if questions == 0 { 0.0 } else { correct as f64 / questions as f64 },
            mean_achieved_ratio: (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            cost: QuestionCost::sum(records.iter().map(|r| &r.cost)),
        }
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratio = self.mean_achieved_ratio.map_or("-".to_string(), |r| format!("{r:.3}"));
        write!(
            f,
            "{:<40} {:>5}/{:<5} acc {:.4}  errors {:<3} ratio {:<6} cost ${}",
            self.setting,
            self.correct,
            self.questions,
            self.accuracy,
            self.errors,
            ratio,
            crate::cost::format_sci(self.cost.total, 4)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub summary: EvalSummary,
    /// In QA input order.
    pub records: Vec<EvalRecord>,
}

/// Built components shared by every setting of a run.
pub struct Pipeline {
    cfg: PipelineConfig,
    retriever: Retriever,
    provider: Box<dyn EmbeddingProvider>,
    scorer: Box<dyn NspScorer>,
    summarizer: Box<dyn Summarizer>,
    llm: LlmClient,
    template: PromptTemplate,
    pricing: PricingTable,
    compute: Option<ComputeCostSpec>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline").field("setting", &self.cfg.setting().label()).finish()
    }
}

fn config_err(e: impl fmt::Display) -> EvalError {
    EvalError::Config(e.to_string())
}

impl Pipeline {
    pub fn new(kb: KnowledgeBase, cfg: PipelineConfig) -> Result<Self, EvalError> {
        let index = match &cfg.index {
            Some(p) => Some(VectorIndex::load(p).map_err(config_err)?),
            None => None,
        };
        Self::build(kb, index, cfg)
    }

    pub fn with_index(kb: KnowledgeBase, index: VectorIndex, cfg: PipelineConfig) -> Result<Self, EvalError> {
        Self::build(kb, Some(index), cfg)
    }

    fn build(kb: KnowledgeBase, index: Option<VectorIndex>, cfg: PipelineConfig) -> Result<Self, EvalError> {
        cfg.setting().validate()?;
        let retriever_provider = cfg.embedding.build().map_err(config_err)?;
        let retriever = match index {
            Some(idx) => Retriever::with_index(kb, idx, retriever_provider),
            None => Retriever::new(kb, retriever_provider),
        }
        .map_err(config_err)?;
        let pricing = match &cfg.pricing {
            Some(p) => PricingTable::load(p).map_err(config_err)?,
            None => PricingTable::builtin(),
        };
        Ok(Pipeline {
            provider: cfg.embedding.build().map_err(config_err)?,
            scorer: cfg.retrieval.nsp.scorer.build(),
            summarizer: cfg.summarizer.build(cfg.token_counter, cfg.segmenter).map_err(config_err)?,
            llm: cfg.llm.client(cfg.token_counter),
            template: cfg.prompt_template()?,
            compute: pricing.compute,
            pricing,
            retriever,
            cfg,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn llm(&self) -> &LlmClient {
        &self.llm
    }

    pub fn evaluate(&self, qa: &[QaItem]) -> Result<EvalOutcome, EvalError> {
        self.evaluate_setting(qa, &self.cfg.setting())
    }

    pub fn evaluate_setting(&self, qa: &[QaItem], setting: &Setting) -> Result<EvalOutcome, EvalError> {
        self.run(qa, setting, |_| Ok(()))
    }

    /// Evaluates in chunks of `concurrency`, handing each chunk to `sink` in
    /// QA order as soon as it completes.
    fn run(
        &self,
        qa: &[QaItem],
        setting: &Setting,
        mut sink: impl FnMut(&[EvalRecord]) -> Result<(), EvalError>,
    ) -> Result<EvalOutcome, EvalError> {
        if qa.is_empty() {
            return Err(EvalError::EmptyQaSet);
        }
        setting.validate()?;
        let label = setting.label();
        let mut records = Vec::with_capacity(qa.len());
        for chunk in qa.chunks(self.cfg.concurrency.max(1)) {
            let done: Vec<EvalRecord> = chunk.par_iter().map(|item| self.question(item, setting, &label)).collect();
            sink(&done)?;
            records.extend(done);
        }
        Ok(EvalOutcome { summary: EvalSummary::from_records(&label, &records), records })
    }

    /// Appends records to `path` as they complete. With `resume`, questions
    /// already recorded there under the same setting are not re-run.
    pub fn evaluate_to_file(&self, qa: &[QaItem], setting: &Setting, path: &Path, resume: bool) -> Result<EvalOutcome, EvalError> {
        let label = setting.label();
        let existing: Vec<EvalRecord> = if resume && path.exists() {
            read_records(path)?.into_iter().filter(|r| r.setting == label).collect()
        } else {
            if !resume && path.exists() {
                fs::remove_file(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
            }
            Vec::new()
        };
        let done: HashSet<&str> = existing.iter().map(|r| r.qa_id.as_str()).collect();
        let todo: Vec<QaItem> = qa.iter().filter(|q| !done.contains(q.id.as_str())).cloned().collect();
        let io_err = |source| EvalError::Io { path: path.to_path_buf(), source };
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        let fresh = if todo.is_empty() {
            Vec::new()
        } else {
            self.run(&todo, setting, |chunk| {
                let mut buf = String::new();
                for r in chunk {
                    buf.push_str(&serde_json::to_string(r).expect("serializable"));
                    buf.push('\n');
                }
                file.write_all(buf.as_bytes()).and_then(|_| file.flush()).map_err(io_err)
            })?
            .records
        };
        let mut by_id: std::collections::HashMap<String, EvalRecord> =
            existing.into_iter().chain(fresh).map(|r| (r.qa_id.clone(), r)).collect();
        let records: Vec<EvalRecord> = qa.iter().filter_map(|q| by_id.remove(&q.id)).collect();
        if records.is_empty() {
            return Err(EvalError::EmptyQaSet);
        }
        Ok(EvalOutcome { summary: EvalSummary::from_records(&label, &records), records })
    }

    fn question(&self, item: &QaItem, setting: &Setting, label: &str) -> EvalRecord {
        let counter = self.cfg.token_counter;
        let query_tokens = if setting.retrieval_enabled { counter.count(&item.question) as u64 } else { 0 };
        let mut rec = EvalRecord {
            qa_id: item.id.clone(),
            setting: label.to_string(),
            retrieved: Vec::new(),
            nsp_scores: Vec::new(),
            selected: Vec::new(),
            context_original: String::new(),
            context_compressed: String::new(),
            achieved_ratio: None,
            prompt: String::new(),
            reply: None,
            parsed: None,
            answer: item.answer,
            correct: false,
            query_tokens,
            input_tokens: 0,
            output_tokens: 0,
            summarization_calls: 0,
            cost: QuestionCost::default(),
            error: None,
        };
        if let Err(e) = self.fill(item, setting, &mut rec) {
            log::warn!("question {}: {e}", item.id);
            rec.error = Some(e);
        }
        let summarization = match (rec.summarization_calls, self.compute) {
            (0, _) | (_, None) => 0.0,
            (n, Some(c)) => summarization_compute_cost(&c).map_or(0.0, |per| per * n as f64),
        };
        rec.cost = QuestionCost::new(
            api_call_cost(rec.input_tokens as f64, rec.output_tokens as f64, &self.pricing.api),
            retrieval_cost(query_tokens as f64, &self.pricing.retrieval),
            summarization,
        );
        rec
    }

    fn compress(&self, text: &str, setting: &Setting, rec: &mut EvalRecord, ratios: &mut Vec<f64>) -> Result<String, String> {
        if setting.compression == CompressionConfig::None {
            return Ok(text.to_string());
        }
        let seg = self.cfg.segmenter.segmenter();
        let out = setting
            .compression
            .apply(text, seg, self.provider.as_ref(), self.summarizer.as_ref())
            .map_err(|e| format!("compression: {e}"))?;
        if matches!(setting.compression, CompressionConfig::Summarize { .. }) {
            rec.summarization_calls += 1;
        }
        ratios.push(out.achieved_ratio);
        Ok(out.compressed_text)
    }

    fn fill(&self, item: &QaItem, setting: &Setting, rec: &mut EvalRecord) -> Result<(), String> {
        let mut ratios = Vec::new();
        if setting.retrieval_enabled {
            let cfg = &setting.retrieval;
            let hits = self.retriever.search(cfg, &item.question).map_err(|e| format!("retrieval: {e}"))?;
            rec.retrieved = hits.ids().into_iter().map(String::from).collect();
            let mut candidates = self.retriever.candidates(&hits);
            let originals: Vec<NspCandidate> = candidates.clone();
            let pre = setting.compress_stage == CompressStage::PreNsp;
            if pre {
                for c in &mut candidates {
                    c.text = self.compress(&c.text, setting, rec, &mut ratios)?;
                }
            }
            let (order, nsp) = apply_nsp(&cfg.nsp, &item.question, &candidates, self.scorer.as_ref())
                .map_err(|e| format!("nsp: {e}"))?;
            rec.nsp_scores = nsp.map(|s| s.scores).unwrap_or_default();
            let text_of = |set: &[NspCandidate], id: &str| {
                set.iter().find(|c| c.doc_id == id).map(|c| c.text.clone()).unwrap_or_default()
            };
            let mut original = Vec::new();
            let mut compressed = Vec::new();
            for id in &order {
                let text = text_of(&originals, id);
                compressed.push(if pre { text_of(&candidates, id) } else { self.compress(&text, setting, rec, &mut ratios)? });
                original.push(text);
            }
            rec.selected = order;
            rec.context_original = original.join("\n");
            rec.context_compressed = compressed.join("\n");
        }
        if !ratios.is_empty() {
            rec.achieved_ratio = Some(ratios.iter().sum::<f64>() / ratios.len() as f64);
        }
        let prompt = build_prompt(&rec.context_compressed, item, &self.template);
        rec.prompt = prompt.rendered;
        let completion = self.llm.complete(&rec.prompt).map_err(|e| format!("llm: {e}"))?;
        rec.input_tokens = completion.input_tokens;
        rec.output_tokens = completion.output_tokens;
        rec.parsed = parse_answer(&completion.text, &item.options).ok();
        rec.reply = Some(completion.text);
        rec.correct = rec.parsed == Some(item.answer);
        Ok(())
    }

    /// One evaluation per `k`, NSP as configured.
    pub fn sweep_k(&self, qa: &[QaItem], ks: &[usize]) -> Result<Vec<(usize, EvalOutcome)>, EvalError> {
        let base = self.cfg.setting();
        ks.iter()
            .map(|&k| {
                let mut s = base.clone();
                s.retrieval_enabled = true;
                s.retrieval.k = k;
                s.retrieval.q = s.retrieval.q.max(k);
                Ok((k, self.evaluate_setting(qa, &s)?))
            })
            .collect()
    }

    /// One evaluation per compression setting.
    pub fn sweep_compression(&self, qa: &[QaItem], grid: &[CompressionConfig]) -> Result<Vec<EvalOutcome>, EvalError> {
        let base = self.cfg.setting();
        grid.iter()
            .map(|c| self.evaluate_setting(qa, &Setting { compression: *c, ..base.clone() }))
            .collect()
    }
}

/// The compression grid of methods × ratios; semantic takes `j = 100·ratio`.
pub fn compression_grid(methods: &[&str], ratios: &[f64], seed: u64) -> Result<Vec<CompressionConfig>, EvalError> {
    let mut grid = Vec::new();
    for m in methods {
        for &r in ratios {
            grid.push(match *m {
                "none" => CompressionConfig::None,
                "semantic" => CompressionConfig::Semantic { j: r * 100.0 },
                "random" => CompressionConfig::Random { ratio: r, seed },
                "summarize" => CompressionConfig::Summarize { ratio: r },
                other => return Err(EvalError::Config(format!("unknown compression method `{other}`"))),
            });
            if *m == "none" {
                break;
            }
        }
    }
    Ok(grid)
}

pub fn evaluate(qa: &[QaItem], kb: &KnowledgeBase, cfg: &PipelineConfig) -> Result<EvalOutcome, EvalError> {
    if qa.is_empty() {
        return Err(EvalError::EmptyQaSet);
    }
    Pipeline::new(kb.clone(), cfg.clone())?.evaluate(qa)
}

pub fn sweep_k(qa: &[QaItem], kb: &KnowledgeBase, cfg: &PipelineConfig, ks: &[usize]) -> Result<Vec<(usize, EvalOutcome)>, EvalError> {
    Pipeline::new(kb.clone(), cfg.clone())?.sweep_k(qa, ks)
}

pub fn sweep_compression(
    qa: &[QaItem],
    kb: &KnowledgeBase,
    cfg: &PipelineConfig,
    grid: &[CompressionConfig],
) -> Result<Vec<EvalOutcome>, EvalError> {
    Pipeline::new(kb.clone(), cfg.clone())?.sweep_compression(qa, grid)
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> String {
    crate::corpus::to_jsonl(records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| EvalError::Record { path: path.to_path_buf(), line: i + 1, source })
        })
        .collect()
}
