//! Context compression: leave-one-out semantic pruning, seeded random
//! deletion, and length-targeted summarization.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::embedding::{embed, l2_distance, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::http::{Endpoint, HttpError};
use crate::llm::{fill_placeholders, ChatSpec, LlmClient, LlmError};
use crate::text::{SegmentedText, Segmenter, SegmenterKind, TokenCounter};

pub const SUMMARIZE_TEMPLATE_EN: &str = include_str!("../../../templates/summarize_en.txt");
pub const SHORTEN_TEMPLATE_EN: &str = include_str!("../../../templates/shorten_en.txt");

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("text has no words")]
    EmptyInput,
    #[error("a distance profile needs at least 2 words, got {0}")]
    TooFewWords(usize),
    #[error("percentile must be in [0, 100), got {0}")]
    InvalidPercentile(f64),
    #[error("ratio {0} is out of range")]
    InvalidRatio(f64),
    #[error("embedding the full text: {0}")]
    BaseEmbedding(#[source] EmbedError),
    #[error("embedding text without word {index}: {source}")]
    WordEmbedding {
        index: usize,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Summarize(#[from] SummarizeError),
}

/// Percentile `j` in `[0, 100)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Percentile(f64);

impl Percentile {
    pub fn new(j: f64) -> Result<Self, CompressionError> {
        if (0.0..100.0).contains(&j) {
            Ok(Percentile(j))
        } else {
            Err(CompressionError::InvalidPercentile(j))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Percentile {
    type Error = CompressionError;
    fn try_from(j: f64) -> Result<Self, Self::Error> {
        Percentile::new(j)
    }
}

impl From<Percentile> for f64 {
    fn from(p: Percentile) -> f64 {
        p.0
    }
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(j/100 * N)` of
/// the ascending sort (rank at least 1).
pub fn nearest_rank(values: &[f64], j: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((j * sorted.len() as f64) / 100.0).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordDistance {
    pub index: usize,
    pub word: String,
    pub distance: f64,
}

/// How far the sentence embedding moves when each word is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub words: Vec<String>,
    pub entries: Vec<WordDistance>,
    pub base_embedding: EmbeddingVector,
}

impl DistanceProfile {
    pub fn distances(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.distance).collect()
    }
}

/// The words with word `index` removed, rejoined.
pub fn leave_one_out(segmenter: &dyn Segmenter, words: &[String], index: usize) -> String {
    let rest: Vec<String> =
        words.iter().enumerate().filter(|&(i, _)| i != index).map(|(_, w)| w.clone()).collect();
    segmenter.join(&rest)
}

pub fn distance_profile(
    text: &str,
    segmenter: &dyn Segmenter,
    provider: &dyn EmbeddingProvider,
) -> Result<DistanceProfile, CompressionError> {
    let words = segmenter.segment_words(text);
    if words.len() < 2 {
        return Err(CompressionError::TooFewWords(words.len()));
    }
    let base = embed(provider, text).map_err(CompressionError::BaseEmbedding)?;
    let results: Vec<Result<WordDistance, CompressionError>> = (0..words.len())
        .into_par_iter()
        .map(|i| {
            let wrap = |source| CompressionError::WordEmbedding { index: i, source };
            let perturbed = embed(provider, &leave_one_out(segmenter, &words, i)).map_err(wrap)?;
            let distance = l2_distance(&base, &perturbed).map_err(wrap)?;
            Ok(WordDistance { index: i, word: words[i].clone(), distance })
        })
        .collect();
    let entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(DistanceProfile { words, entries, base_embedding: base })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMethod {
    None,
    Semantic,
    Random,
    Summarize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub original: SegmentedText,
    /// Kept words in original order; for summaries, the single rewritten text.
    pub retained_words: Vec<String>,
    pub method: CompressionMethod,
    /// Retained words over original words.
    pub achieved_ratio: f64,
    pub compressed_text: String,
}

impl CompressionResult {
    fn from_kept(original: SegmentedText, kept: Vec<usize>, method: CompressionMethod, segmenter: &dyn Segmenter) -> Self {
        let retained_words: Vec<String> = kept.iter().map(|&i| original.words[i].clone()).collect();
        let achieved_ratio = retained_words.len() as f64 / original.n() as f64;
        let compressed_text = segmenter.join(&retained_words);
        CompressionResult { original, retained_words, method, achieved_ratio, compressed_text }
    }

    /// Every word kept; the text is returned verbatim, punctuation included.
    fn identity(original: SegmentedText, method: CompressionMethod) -> Self {
        CompressionResult {
            retained_words: original.words.clone(),
            achieved_ratio: 1.0,
            compressed_text: original.original.clone(),
            method,
            original,
        }
    }
}

/// Word indices kept at percentile `j`: distances strictly above the
/// nearest-rank `p_j`, or the single largest (earliest on ties) if that
/// would keep nothing. `j = 0` keeps everything.
pub fn retained_indices(distances: &[f64], j: Percentile) -> Vec<usize> {
    if j.value() == 0.0 || distances.is_empty() {
        return (0..distances.len()).collect();
    }
    let p = nearest_rank(distances, j.value()).expect("non-empty");
    let kept: Vec<usize> = (0..distances.len()).filter(|&i| distances[i] > p).collect();
    if !kept.is_empty() {
        return kept;
    }
    let best = (0..distances.len())
        .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)))
        .expect("non-empty");
    vec![best]
}

pub fn semantic_compress_profile(
    text: &str,
    profile: &DistanceProfile,
    j: Percentile,
    segmenter: &dyn Segmenter,
) -> CompressionResult {
    let original = SegmentedText { original: text.to_string(), words: profile.words.clone() };
    let kept = retained_indices(&profile.distances(), j);
    CompressionResult::from_kept(original, kept, CompressionMethod::Semantic, segmenter)
}

pub fn semantic_compress(
    text: &str,
    j: Percentile,
    segmenter: &dyn Segmenter,
    provider: &dyn EmbeddingProvider,
) -> Result<CompressionResult, CompressionError> {
    let original = segmenter.segment(text);
    match original.n() {
        0 => Err(CompressionError::EmptyInput),
        1 => Ok(CompressionResult::identity(original, CompressionMethod::Semantic)),
        _ if j.value() == 0.0 => Ok(CompressionResult::identity(original, CompressionMethod::Semantic)),
        _ => {
            let profile = distance_profile(text, segmenter, provider)?;
            Ok(semantic_compress_profile(text, &profile, j, segmenter))
        }
    }
}

/// Deletes `round(ratio * n)` words (at most `n - 1`) chosen uniformly with a
/// ChaCha8 generator seeded from `seed`.
pub fn random_delete(
    text: &str,
    ratio: f64,
    seed: u64,
    segmenter: &dyn Segmenter,
) -> Result<CompressionResult, CompressionError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CompressionError::InvalidRatio(ratio));
    }
    let original = segmenter.segment(text);
    let n = original.n();
    if n == 0 {
        return Err(CompressionError::EmptyInput);
    }
    let delete = ((ratio * n as f64).round() as usize).min(n - 1);
    if delete == 0 {
        return Ok(CompressionResult::identity(original, CompressionMethod::Random));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gone = vec![false; n];
    for i in sample(&mut rng, n, delete) {
        gone[i] = true;
    }
    let kept = (0..n).filter(|&i| !gone[i]).collect();
    Ok(CompressionResult::from_kept(original, kept, CompressionMethod::Random, segmenter))
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("target ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("summarizer does not serve ratio {0}")]
    UnsupportedRatio(f64),
    #[error("summarizer returned an empty summary")]
    EmptySummary,
    #[error("summarizer service: {0}")]
    Http(#[from] HttpError),
    #[error("summarizer LLM: {0}")]
    Llm(#[from] LlmError),
    #[error("summarizer template: {0}")]
    Template(String),
}

impl SummarizeError {
    pub fn is_retryable(&self) -> bool {
        match self {
            SummarizeError::Http(e) => e.is_retryable(),
            SummarizeError::Llm(e) => e.is_retryable() || matches!(e, LlmError::RetriesExhausted { .. }),
            _ => false,
        }
    }
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, text: &str, target_ratio: f64) -> Result<String, SummarizeError>;
}

/// Keeps the first `round(ratio * n)` words (at least one).
#[derive(Debug, Clone, Copy, Default)]
pub struct TruncatingSummarizer {
    pub segmenter: SegmenterKind,
}

impl Summarizer for TruncatingSummarizer {
    fn summarize(&self, text: &str, target_ratio: f64) -> Result<String, SummarizeError> {
        let seg = self.segmenter.segmenter();
        let words = seg.segment_words(text);
        let keep = ((target_ratio * words.len() as f64).round() as usize).max(1).min(words.len());
        Ok(seg.join(&words[..keep]))
    }
}

/// A fine-tuned seq2seq service: POST `{text, target_ratio}` → `{summary}`.
#[derive(Debug, Clone)]
pub struct ModelServerSummarizer {
    pub endpoint: Endpoint,
    /// Ratios the server has models for; `None` accepts any ratio in (0, 1).
    pub supported_ratios: Option<Vec<f64>>,
}

impl Summarizer for ModelServerSummarizer {
    fn summarize(&self, text: &str, target_ratio: f64) -> Result<String, SummarizeError> {
        if let Some(rs) = &self.supported_ratios {
            if !rs.iter().any(|r| (r - target_ratio).abs() < 1e-9) {
                return Err(SummarizeError::UnsupportedRatio(target_ratio));
            }
        }
        let resp = self.endpoint.post_json(&json!({ "text": text, "target_ratio": target_ratio }))?;
        let summary = resp
            .get("summary")
            .and_then(|v| v.as_str())
            .ok_or_else(|| self.endpoint.invalid("missing string `summary`"))?;
        Ok(summary.to_string())
    }
}

/// Prompts a chat model with a word budget of `round(ratio * n)`.
pub struct LlmSummarizer {
    pub client: LlmClient,
    pub template: String,
    pub segmenter: SegmenterKind,
}

impl fmt::Debug for LlmSummarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmSummarizer").field("segmenter", &self.segmenter).finish()
    }
}

impl Summarizer for LlmSummarizer {
    fn summarize(&self, text: &str, target_ratio: f64) -> Result<String, SummarizeError> {
        let n = self.segmenter.segmenter().word_count(text);
        let budget = ((target_ratio * n as f64).round() as usize).max(1).to_string();
        let prompt = fill_placeholders(&self.template, &[("text", text), ("word_budget", &budget)]);
        Ok(self.client.complete(&prompt)?.text.trim().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummarizerSpec {
    StubTruncate {
        #[serde(default)]
        segmenter: SegmenterKind,
    },
    RemoteModelServer {
        endpoint: Endpoint,
        #[serde(default)]
        supported_ratios: Option<Vec<f64>>,
    },
    RemoteLlm {
        chat: ChatSpec,
        #[serde(default)]
        template: Option<PathBuf>,
    },
}

impl Default for SummarizerSpec {
    fn default() -> Self {
        SummarizerSpec::StubTruncate { segmenter: SegmenterKind::CjkChar }
    }
}

impl SummarizerSpec {
    pub fn build(&self, counter: TokenCounter, segmenter: SegmenterKind) -> Result<Box<dyn Summarizer>, SummarizeError> {
        Ok(match self {
            SummarizerSpec::StubTruncate { segmenter } => Box::new(TruncatingSummarizer { segmenter: *segmenter }),
            SummarizerSpec::RemoteModelServer { endpoint, supported_ratios } => Box::new(ModelServerSummarizer {
                endpoint: endpoint.clone(),
                supported_ratios: supported_ratios.clone(),
            }),
            SummarizerSpec::RemoteLlm { chat, template } => {
                let template = match template {
                    Some(p) => fs::read_to_string(p).map_err(|e| SummarizeError::Template(format!("{}: {e}", p.display())))?,
                    None => SUMMARIZE_TEMPLATE_EN.to_string(),
                };
                Box::new(LlmSummarizer { client: chat.client(counter), template, segmenter })
            }
        })
    }
}

pub fn summarize_compress(
    text: &str,
    target_ratio: f64,
    summarizer: &dyn Summarizer,
    segmenter: &dyn Segmenter,
) -> Result<CompressionResult, CompressionError> {
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(SummarizeError::InvalidRatio(target_ratio).into());
    }
    let original = segmenter.segment(text);
    if original.n() == 0 {
        return Err(CompressionError::EmptyInput);
    }
    let summary = summarizer.summarize(text, target_ratio)?;
    let summary_words = segmenter.word_count(&summary);
    if summary.trim().is_empty() || summary_words == 0 {
        return Err(SummarizeError::EmptySummary.into());
    }
    Ok(CompressionResult {
        achieved_ratio: summary_words as f64 / original.n() as f64,
        original,
        retained_words: vec![summary.clone()],
        method: CompressionMethod::Summarize,
        compressed_text: summary,
    })
}

/// One compression setting of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CompressionConfig {
    #[default]
    None,
    Semantic { j: f64 },
    Random { ratio: f64, seed: u64 },
    Summarize { ratio: f64 },
}

impl CompressionConfig {
    pub fn method(&self) -> CompressionMethod {
        match self {
            CompressionConfig::None => CompressionMethod::None,
            CompressionConfig::Semantic { .. } => CompressionMethod::Semantic,
            CompressionConfig::Random { .. } => CompressionMethod::Random,
            CompressionConfig::Summarize { .. } => CompressionMethod::Summarize,
        }
    }

    /// The setting's nominal parameter: `j` for semantic, the ratio otherwise.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            CompressionConfig::None => None,
            CompressionConfig::Semantic { j } => Some(j),
            CompressionConfig::Random { ratio, .. } | CompressionConfig::Summarize { ratio } => Some(ratio),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            CompressionConfig::None => "none".into(),
            CompressionConfig::Semantic { j } => format!("semantic:j={j}"),
            CompressionConfig::Random { ratio, .. } => format!("random:ratio={ratio}"),
            CompressionConfig::Summarize { ratio } => format!("summarize:ratio={ratio}"),
        }
    }

    pub fn validate(&self) -> Result<(), CompressionError> {
        match *self {
            CompressionConfig::None => Ok(()),
            CompressionConfig::Semantic { j } => Percentile::new(j).map(|_| ()),
            CompressionConfig::Random { ratio, .. } if (0.0..1.0).contains(&ratio) => Ok(()),
            CompressionConfig::Summarize { ratio } if ratio > 0.0 && ratio < 1.0 => Ok(()),
            CompressionConfig::Random { ratio, .. } | CompressionConfig::Summarize { ratio } => {
                Err(CompressionError::InvalidRatio(ratio))
            }
        }
    }

    /// Compresses `text` with this setting. `None` keeps every word.
    pub fn apply(
        &self,
        text: &str,
        segmenter: &dyn Segmenter,
        provider: &dyn EmbeddingProvider,
        summarizer: &dyn Summarizer,
    ) -> Result<CompressionResult, CompressionError> {
        match *self {
            CompressionConfig::None => {
                let original = segmenter.segment(text);
                if original.n() == 0 {
                    return Err(CompressionError::EmptyInput);
                }
                Ok(CompressionResult::identity(original, CompressionMethod::None))
            }
            CompressionConfig::Semantic { j } => semantic_compress(text, Percentile::new(j)?, segmenter, provider),
            CompressionConfig::Random { ratio, seed } => random_delete(text, ratio, seed, segmenter),
            CompressionConfig::Summarize { ratio } => summarize_compress(text, ratio, summarizer, segmenter),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ReferenceEmbedder;
    use crate::text::{CjkCharSegmenter, WhitespaceSegmenter};

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(5.0));
        assert_eq!(nearest_rank(&v, 30.0), Some(3.0));
        assert_eq!(nearest_rank(&v, 70.0), Some(7.0));
        assert_eq!(nearest_rank(&v, 1.0), Some(1.0));
        assert_eq!(nearest_rank(&v, 99.9), Some(10.0));
        assert_eq!(nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn percentile_bounds() {
        assert!(Percentile::new(0.0).is_ok());
        assert!(Percentile::new(100.0).is_err());
        assert!(Percentile::new(-1.0).is_err());
    }

    #[test]
    fn retained_indices_keeps_strictly_above() {
        let d = [0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 1.0];
        let kept = retained_indices(&d, Percentile::new(50.0).unwrap());
        assert_eq!(kept, vec![2, 4, 6, 8, 9]);
        // all ties: nothing is strictly above, keep the earliest maximum
        assert_eq!(retained_indices(&[0.2, 0.2, 0.2], Percentile::new(50.0).unwrap()), vec![0]);
        assert_eq!(retained_indices(&d, Percentile::new(0.0).unwrap()).len(), 10);
    }

    #[test]
    fn semantic_identity_and_single_word() {
        let e = ReferenceEmbedder::default();
        let r = semantic_compress("babies should not eat raw fish", Percentile::new(0.0).unwrap(), &CjkCharSegmenter, &e)
            .unwrap();
        assert_eq!(r.retained_words, r.original.words);
        assert_eq!(r.achieved_ratio, 1.0);
        for j in [0.0, 50.0, 90.0] {
            let r = semantic_compress("fish", Percentile::new(j).unwrap(), &CjkCharSegmenter, &e).unwrap();
            assert_eq!(r.retained_words, ["fish"]);
        }
        assert!(matches!(
            semantic_compress("", Percentile::new(10.0).unwrap(), &CjkCharSegmenter, &e),
            Err(CompressionError::EmptyInput)
        ));
    }

    #[test]
    fn profile_of_duplicates_is_symmetric() {
        let p = distance_profile("x x", &CjkCharSegmenter, &ReferenceEmbedder::default()).unwrap();
        assert_eq!(p.entries.len(), 2);
        assert_eq!(p.entries[0].distance, p.entries[1].distance);
        assert!(matches!(
            distance_profile("x", &CjkCharSegmenter, &ReferenceEmbedder::default()),
            Err(CompressionError::TooFewWords(1))
        ));
    }

    #[test]
    fn random_delete_examples() {
        let text = "a b c d e f g h i j";
        let r = random_delete(text, 0.0, 7, &WhitespaceSegmenter).unwrap();
        assert_eq!(r.retained_words.len(), 10);
        let r1 = random_delete(text, 0.3, 7, &WhitespaceSegmenter).unwrap();
        let r2 = random_delete(text, 0.3, 7, &WhitespaceSegmenter).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.retained_words.len(), 7);
        assert!((r1.achieved_ratio - 0.7).abs() < 1e-12);
        let one = random_delete("solo", 0.99, 1, &WhitespaceSegmenter).unwrap();
        assert_eq!(one.retained_words, ["solo"]);
        assert!(random_delete(text, 1.0, 1, &WhitespaceSegmenter).is_err());
    }

    #[test]
    fn truncating_summarizer() {
        let text: String = (0..20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let s = TruncatingSummarizer::default();
        let r = summarize_compress(&text, 0.5, &s, &CjkCharSegmenter).unwrap();
        assert_eq!(CjkCharSegmenter.word_count(&r.compressed_text), 10);
        assert_eq!(r.achieved_ratio, 0.5);
        assert_eq!(r.retained_words.len(), 1);
        assert!(matches!(
            summarize_compress(&text, 1.0, &s, &CjkCharSegmenter),
            Err(CompressionError::Summarize(SummarizeError::InvalidRatio(_)))
        ));
    }

    struct Empty;
    impl Summarizer for Empty {
        fn summarize(&self, _: &str, _: f64) -> Result<String, SummarizeError> {
            Ok("  ".into())
        }
    }

    #[test]
    fn empty_summary_is_error() {
        assert!(matches!(
            summarize_compress("some words here", 0.5, &Empty, &CjkCharSegmenter),
            Err(CompressionError::Summarize(SummarizeError::EmptySummary))
        ));
    }

    #[test]
    fn model_server_rejects_unserved_ratio() {
        let s = ModelServerSummarizer { endpoint: Endpoint::new("http://127.0.0.1:9"), supported_ratios: Some(vec![0.3, 0.5, 0.7]) };
        assert!(matches!(s.summarize("x y", 0.4), Err(SummarizeError::UnsupportedRatio(_))));
    }

    #[test]
    fn compression_config_labels_and_validation() {
        assert_eq!(CompressionConfig::Semantic { j: 50.0 }.label(), "semantic:j=50");
        assert!(CompressionConfig::Semantic { j: 100.0 }.validate().is_err());
        assert!(CompressionConfig::Summarize { ratio: 0.0 }.validate().is_err());
        assert!(CompressionConfig::Random { ratio: 0.0, seed: 1 }.validate().is_ok());
        let cfg: CompressionConfig = toml::from_str("method = \"random\"\nratio = 0.3\nseed = 4").unwrap();
        assert_eq!(cfg, CompressionConfig::Random { ratio: 0.3, seed: 4 });
    }
}
