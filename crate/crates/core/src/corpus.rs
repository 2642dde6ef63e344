//! Knowledge base and multiple-choice QA set, stored as JSON Lines.
//!
//! Loaders validate every record and report all offending lines at once.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{CjkCharSegmenter, Segmenter};

/// Life stage a recommendation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    PrePregnancy,
    Pregnancy,
    Postpartum,
    Lactation,
    Infant,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::PrePregnancy,
        Group::Pregnancy,
        Group::Postpartum,
        Group::Lactation,
        Group::Infant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::PrePregnancy => "pre_pregnancy",
            Group::Pregnancy => "pregnancy",
            Group::Postpartum => "postpartum",
            Group::Lactation => "lactation",
            Group::Infant => "infant",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub food: String,
    pub group: Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    /// 1-based index into `options`.
    pub answer: u8,
    pub food: String,
    pub group: Group,
}

/// Word-count statistics over a knowledge base. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeStats {
    pub count: usize,
    pub mean: f64,
    pub max: usize,
    pub min: usize,
    pub std: f64,
}

impl KnowledgeStats {
    pub fn from_word_counts(counts: &[usize]) -> Self {
        if counts.is_empty() {
            return KnowledgeStats::default();
        }
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<usize>() as f64 / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        KnowledgeStats {
            count: counts.len(),
            mean,
            max: counts.iter().copied().max().unwrap_or(0),
            min: counts.iter().copied().min().unwrap_or(0),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordProblem {
    Malformed(String),
    DuplicateId(String),
    UnknownGroup(String),
    EmptyField(&'static str),
    OptionCount(usize),
    AnswerOutOfRange(i64),
}

impl fmt::Display for RecordProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordProblem::Malformed(msg) => write!(f, "malformed record: {msg}"),
            RecordProblem::DuplicateId(id) => write!(f, "duplicate id \"{id}\""),
            RecordProblem::UnknownGroup(g) => write!(f, "unknown group \"{g}\""),
            RecordProblem::EmptyField(field) => write!(f, "field `{field}` is empty"),
            RecordProblem::OptionCount(n) => write!(f, "expected exactly 3 options, found {n}"),
            RecordProblem::AnswerOutOfRange(a) => write!(f, "answer {a} is not in {{1,2,3}}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub problem: RecordProblem,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {} invalid record(s): {}", .errors.len(), summarize(.errors))]
    Invalid { path: PathBuf, errors: Vec<LineError> },
    #[error("duplicate document id \"{0}\"")]
    DuplicateId(String),
    #[error("document \"{0}\" has empty text")]
    EmptyText(String),
}

fn summarize(errors: &[LineError]) -> String {
    errors
        .iter()
        .map(|e| format!("line {}: {}", e.line, e.problem))
        .collect::<Vec<_>>()
        .join("; ")
}

/// An immutable collection of documents with word-count statistics kept in
/// sync with its contents.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    documents: Vec<Document>,
    stats: KnowledgeStats,
}

impl KnowledgeBase {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
            if doc.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(doc.id.clone()));
            }
        }
        let counts: Vec<usize> = documents.iter().map(|d| CjkCharSegmenter.word_count(&d.text)).collect();
        Ok(KnowledgeBase { stats: KnowledgeStats::from_word_counts(&counts), documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn stats(&self) -> KnowledgeStats {
        self.stats
    }
}

pub fn knowledge_stats(kb: &KnowledgeBase) -> KnowledgeStats {
    kb.stats()
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    food: String,
    group: String,
}

#[derive(Deserialize)]
struct RawQa {
    id: String,
    question: String,
    options: Vec<String>,
    answer: i64,
    food: String,
    group: String,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn non_blank_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_group(raw: &str, problems: &mut Vec<RecordProblem>) -> Option<Group> {
    match raw.parse() {
        Ok(g) => Some(g),
        Err(g) => {
            problems.push(RecordProblem::UnknownGroup(g));
            None
        }
    }
}

pub fn parse_knowledge(content: &str, path: &Path) -> Result<KnowledgeBase, CorpusError> {
    let mut documents = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (line, raw) in non_blank_lines(content) {
        let rec: RawDocument = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError { line, problem: RecordProblem::Malformed(e.to_string()) });
                continue;
            }
        };
        let mut problems = Vec::new();
        if rec.id.is_empty() {
            problems.push(RecordProblem::EmptyField("id"));
        } else if !seen.insert(rec.id.clone()) {
            problems.push(RecordProblem::DuplicateId(rec.id.clone()));
        }
        if rec.text.trim().is_empty() {
            problems.push(RecordProblem::EmptyField("text"));
        }
        let group = parse_group(&rec.group, &mut problems);
        match group {
            Some(group) if problems.is_empty() => documents.push(Document {
                id: rec.id,
                text: rec.text,
                food: rec.food,
                group,
            }),
            _ => errors.extend(problems.into_iter().map(|problem| LineError { line, problem })),
        }
    }
    if !errors.is_empty() {
        return Err(CorpusError::Invalid { path: path.to_path_buf(), errors });
    }
    KnowledgeBase::new(documents)
}

pub fn load_knowledge(path: impl AsRef<Path>) -> Result<KnowledgeBase, CorpusError> {
    let path = path.as_ref();
    parse_knowledge(&read(path)?, path)
}

pub fn parse_qa(content: &str, path: &Path) -> Result<Vec<QaItem>, CorpusError> {
    let mut items = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (line, raw) in non_blank_lines(content) {
        let rec: RawQa = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError { line, problem: RecordProblem::Malformed(e.to_string()) });
                continue;
            }
        };
        let mut problems = Vec::new();
        if rec.id.is_empty() {
            problems.push(RecordProblem::EmptyField("id"));
        } else if !seen.insert(rec.id.clone()) {
            problems.push(RecordProblem::DuplicateId(rec.id.clone()));
        }
        if rec.question.trim().is_empty() {
            problems.push(RecordProblem::EmptyField("question"));
        }
        if rec.options.len() != 3 {
            problems.push(RecordProblem::OptionCount(rec.options.len()));
        }
        if !(1..=3).contains(&rec.answer) {
            problems.push(RecordProblem::AnswerOutOfRange(rec.answer));
        }
        let group = parse_group(&rec.group, &mut problems);
        match group {
            Some(group) if problems.is_empty() => items.push(QaItem {
                id: rec.id,
                question: rec.question,
                options: rec.options,
                answer: rec.answer as u8,
                food: rec.food,
                group,
            }),
            _ => errors.extend(problems.into_iter().map(|problem| LineError { line, problem })),
        }
    }
    if !errors.is_empty() {
        return Err(CorpusError::Invalid { path: path.to_path_buf(), errors });
    }
    Ok(items)
}

pub fn load_qa(path: impl AsRef<Path>) -> Result<Vec<QaItem>, CorpusError> {
    let path = path.as_ref();
    parse_qa(&read(path)?, path)
}

/// One JSON object per line, fields in declaration order, trailing newline.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_knowledge(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_file(path.as_ref(), to_jsonl(kb.documents()).as_bytes())
}

pub fn save_qa(items: &[QaItem], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_file(path.as_ref(), to_jsonl(items).as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}
