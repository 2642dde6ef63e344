//! Multi-level self-instruct data generation: summarize a document to a word
//! budget, then keep asking for a shorter version until the length lands in
//! the acceptance window or the round budget runs out.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{to_jsonl, Document, KnowledgeBase};
use crate::llm::{fill_placeholders, ChatMessage, LlmClient, LlmError};
use crate::text::{Segmenter, SegmenterKind};

pub const SHORTEN_TEMPLATE_EN: &str = include_str!("../../../templates/shorten_en.txt");
pub use crate::compression::SUMMARIZE_TEMPLATE_EN;

/// Documents shorter than this are not worth summarizing.
pub const MIN_SOURCE_WORDS: usize = 5;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("document \"{doc_id}\" has {words} words; at least {MIN_SOURCE_WORDS} are required")]
    TooShort { doc_id: String, words: usize },
    #[error("model call failed for document \"{doc_id}\" in round {round}: {source}")]
    Llm {
        doc_id: String,
        round: u32,
        #[source]
        source: LlmError,
    },
    #[error("corpus has {available} documents but the splits need {required}")]
    InsufficientCorpus { required: usize, available: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 400, val: 50, test: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub target_ratios: Vec<f64>,
    pub tolerance: f64,
    pub max_rounds: u32,
    pub split_sizes: SplitSizes,
    pub seed: u64,
    /// Draw a fresh source sample for every ratio instead of reusing one.
    pub resample_per_ratio: bool,
    pub segmenter: SegmenterKind,
    pub summarize_template: String,
    pub shorten_template: String,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            target_ratios: vec![0.3, 0.5, 0.7],
            tolerance: 0.10,
            max_rounds: 5,
            split_sizes: SplitSizes::default(),
            seed: 0,
            resample_per_ratio: false,
            segmenter: SegmenterKind::CjkChar,
            summarize_template: SUMMARIZE_TEMPLATE_EN.to_string(),
            shorten_template: SHORTEN_TEMPLATE_EN.to_string(),
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.target_ratios.is_empty() {
            return Err(GenError::InvalidSpec("no target ratios".into()));
        }
        if let Some(r) = self.target_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(GenError::InvalidSpec(format!("target ratio {r} is outside (0, 1)")));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 0.5) {
            return Err(GenError::InvalidSpec(format!("tolerance {} is outside (0, 0.5)", self.tolerance)));
        }
        if self.max_rounds == 0 {
            return Err(GenError::InvalidSpec("max_rounds must be at least 1".into()));
        }
        for (name, t) in [("summarize", &self.summarize_template), ("shorten", &self.shorten_template)] {
            if !t.contains("{text}") || !t.contains("{word_budget}") {
                return Err(GenError::InvalidSpec(format!("{name} template needs {{text}} and {{word_budget}}")));
            }
        }
        Ok(())
    }

    /// `round(ratio * n)`, at least one word.
    pub fn word_budget(n: usize, ratio: f64) -> usize {
        ((ratio * n as f64).round() as usize).max(1)
    }

    /// Word counts in `[T(1 - tol), T(1 + tol)]` are accepted.
    pub fn accepts(&self, words: usize, budget: usize) -> bool {
        let (w, t) = (words as f64, budget as f64);
        w >= t * (1.0 - self.tolerance) && w <= t * (1.0 + self.tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub round: u32,
    pub prompt: String,
    pub reply: String,
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub source_doc_id: String,
    pub original_text: String,
    pub summary: String,
    pub target_ratio: f64,
    pub achieved_ratio: f64,
    pub rounds_used: u32,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub source_doc_id: String,
    pub target_ratio: f64,
    pub rounds: Vec<Round>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub record: GenRecord,
    /// One entry per round; its length equals `record.rounds_used`.
    pub transcript: Transcript,
}

pub fn generate_one(doc: &Document, ratio: f64, spec: &GenSpec, llm: &LlmClient) -> Result<Generation, GenError> {
    let seg: &dyn Segmenter = spec.segmenter.segmenter();
    let n = seg.word_count(&doc.text);
    if n < MIN_SOURCE_WORDS {
        return Err(GenError::TooShort { doc_id: doc.id.clone(), words: n });
    }
    let budget = GenSpec::word_budget(n, ratio);
    let budget_str = budget.to_string();
    let mut messages = Vec::new();
    let mut rounds = Vec::new();
    let mut current = doc.text.clone();
    let mut accepted = false;
    for round in 1..=spec.max_rounds {
        let template = if round == 1 { &spec.summarize_template } else { &spec.shorten_template };
        let prompt = fill_placeholders(template, &[("text", &current), ("word_budget", &budget_str)]);
        messages.push(ChatMessage::user(prompt.clone()));
        let reply = llm
            .chat(&messages)
            .map_err(|source| GenError::Llm { doc_id: doc.id.clone(), round, source })?
            .text
            .trim()
            .to_string();
        messages.push(ChatMessage::assistant(reply.clone()));
        let words = seg.word_count(&reply);
        rounds.push(Round { round, prompt, reply: reply.clone(), words });
        current = reply;
        if spec.accepts(words, budget) {
            accepted = true;
            break;
        }
    }
    let words = rounds.last().map_or(n, |r| r.words);
    let record = GenRecord {
        source_doc_id: doc.id.clone(),
        original_text: doc.text.clone(),
        summary: current,
        target_ratio: ratio,
        achieved_ratio: words as f64 / n as f64,
        rounds_used: rounds.len() as u32,
        accepted,
    };
    let transcript = Transcript { source_doc_id: doc.id.clone(), target_ratio: ratio, rounds };
    Ok(Generation { record, transcript })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioDataset {
    pub ratio: f64,
    /// Records per split, each sorted by source document id.
    pub train: Vec<GenRecord>,
    pub val: Vec<GenRecord>,
    pub test: Vec<GenRecord>,
    pub transcripts: Vec<Transcript>,
}

impl RatioDataset {
    pub fn split(&self, s: Split) -> &[GenRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &GenRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn dir_name(&self) -> String {
        format!("ratio_{}", self.ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub ratio: f64,
    pub records: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub mean_rounds: f64,
    pub mean_achieved_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub tolerance: f64,
    pub max_rounds: u32,
    pub split_sizes: SplitSizes,
    pub resample_per_ratio: bool,
    pub ratios: Vec<RatioStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub per_ratio: Vec<RatioDataset>,
    pub manifest: Manifest,
}

fn ratio_stats(d: &RatioDataset) -> RatioStats {
    let records: Vec<&GenRecord> = d.records().collect();
    let n = records.len();
    let accepted = records.iter().filter(|r| r.accepted).count();
    let mean = |f: &dyn Fn(&GenRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    RatioStats {
        ratio: d.ratio,
        records: n,
        accepted,
        acceptance_rate: if n == 0 { 0.0 } else { accepted as f64 / n as f64 },
        mean_rounds: mean(&|r| r.rounds_used as f64),
        mean_achieved_ratio: mean(&|r| r.achieved_ratio),
    }
}

/// Draws `sizes.total()` distinct documents (in id order before sampling)
/// and cuts them into train/val/test.
fn draw_splits<'a>(docs: &[&'a Document], sizes: SplitSizes, rng: &mut ChaCha8Rng) -> [Vec<&'a Document>; 3] {
    let picked: Vec<&Document> = sample(rng, docs.len(), sizes.total()).into_iter().map(|i| docs[i]).collect();
    let (train, rest) = picked.split_at(sizes.train);
    let (val, test) = rest.split_at(sizes.val);
    [train, val, test].map(|s| {
        let mut v = s.to_vec();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    })
}

pub fn generate_dataset(kb: &KnowledgeBase, spec: &GenSpec, llm: &LlmClient) -> Result<Dataset, GenError> {
    spec.validate()?;
    let required = spec.split_sizes.total();
    if kb.len() < required {
        return Err(GenError::InsufficientCorpus { required, available: kb.len() });
    }
    let mut docs: Vec<&Document> = kb.documents().iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = draw_splits(&docs, spec.split_sizes, &mut rng);

    let mut per_ratio = Vec::with_capacity(spec.target_ratios.len());
    for &ratio in &spec.target_ratios {
        let splits = if spec.resample_per_ratio { draw_splits(&docs, spec.split_sizes, &mut rng) } else { shared.clone() };
        let mut out: [Vec<GenRecord>; 3] = Default::default();
        let mut transcripts = Vec::new();
        for (slot, split_docs) in out.iter_mut().zip(&splits) {
            let generated: Vec<Result<Generation, GenError>> =
                split_docs.par_iter().map(|d| generate_one(d, ratio, spec, llm)).collect();
            for g in generated {
                let g = g?;
                slot.push(g.record);
                transcripts.push(g.transcript);
            }
        }
        transcripts.sort_by(|a, b| a.source_doc_id.cmp(&b.source_doc_id));
        let [train, val, test] = out;
        per_ratio.push(RatioDataset { ratio, train, val, test, transcripts });
    }
    let manifest = Manifest {
        seed: spec.seed,
        tolerance: spec.tolerance,
        max_rounds: spec.max_rounds,
        split_sizes: spec.split_sizes,
        resample_per_ratio: spec.resample_per_ratio,
        ratios: per_ratio.iter().map(ratio_stats).collect(),
    };
    Ok(Dataset { per_ratio, manifest })
}

fn write(path: &Path, content: &str) -> Result<(), GenError> {
    fs::write(path, content).map_err(|source| GenError::Io { path: path.to_path_buf(), source })
}

/// Layout: `<dir>/ratio_<r>/{train,val,test,transcripts}.jsonl` plus
/// `<dir>/manifest.json`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), GenError> {
    let dir = dir.as_ref();
    for d in &ds.per_ratio {
        let sub = dir.join(d.dir_name());
        fs::create_dir_all(&sub).map_err(|source| GenError::Io { path: sub.clone(), source })?;
        for s in Split::ALL {
            write(&sub.join(format!("{}.jsonl", s.as_str())), &to_jsonl(d.split(s)))?;
        }
        write(&sub.join("transcripts.jsonl"), &to_jsonl(&d.transcripts))?;
    }
    let manifest = serde_json::to_string_pretty(&ds.manifest).expect("serializable") + "\n";
    write(&dir.join("manifest.json"), &manifest)
}
