//! Word segmentation, token counting and the corpus word-frequency entropy model.
//!
//! Segmentation is deterministic and dependency-free: runs of non-CJK letters
//! and digits form one word, every CJK codepoint is a word of its own, and
//! whitespace and punctuation only separate words.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::KnowledgeBase;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("invalid token counter `{0}` (expected `word` or `chars:<r>` with r > 0)")]
    InvalidTokenCounter(String),
    #[error("unknown segmenter `{0}` (expected `cjk-char` or `whitespace`)")]
    UnknownSegmenter(String),
    #[error("cannot build a frequency model from a corpus without words")]
    EmptyCorpus,
    #[error("text has no words; mean entropy is undefined")]
    EmptyText,
}

/// Returns true for codepoints that are segmented one per word.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // extensions B+ and compatibility supplement
}

pub trait Segmenter: Send + Sync {
    fn segment_words(&self, text: &str) -> Vec<String>;

    /// Inverse of segmentation for perturbed word lists; re-segmenting the
    /// joined string yields the same words.
    fn join(&self, words: &[String]) -> String;

    fn segment(&self, text: &str) -> SegmentedText {
        SegmentedText {
            original: text.to_string(),
            words: self.segment_words(text),
        }
    }

    fn word_count(&self, text: &str) -> usize {
        self.segment_words(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CjkCharSegmenter;

impl Segmenter for CjkCharSegmenter {
    fn segment_words(&self, text: &str) -> Vec<String> {
        let mut words = Vec::new();
        let mut run = String::new();
        for c in text.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    words.push(std::mem::take(&mut run));
                }
                words.push(c.to_string());
            } else if c.is_alphanumeric() {
                run.push(c);
            } else if !run.is_empty() {
                words.push(std::mem::take(&mut run));
            }
        }
        if !run.is_empty() {
            words.push(run);
        }
        words
    }

    fn join(&self, words: &[String]) -> String {
        let mut out = String::new();
        let mut prev_cjk = true;
        for word in words {
            let starts_cjk = word.chars().next().is_some_and(is_cjk);
            if !out.is_empty() && !prev_cjk && !starts_cjk {
                out.push(' ');
            }
            out.push_str(word);
            prev_cjk = word.chars().last().is_some_and(is_cjk);
        }
        out
    }
}

/// Splits on whitespace only; punctuation stays attached to its word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceSegmenter;

impl Segmenter for WhitespaceSegmenter {
    fn segment_words(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn join(&self, words: &[String]) -> String {
        words.join(" ")
    }
}

/// Config key `segmenter=cjk-char|whitespace`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmenterKind {
    #[default]
    #[serde(rename = "cjk-char")]
    CjkChar,
    #[serde(rename = "whitespace")]
    Whitespace,
}

impl SegmenterKind {
    pub fn segmenter(self) -> &'static dyn Segmenter {
        match self {
            SegmenterKind::CjkChar => &CjkCharSegmenter,
            SegmenterKind::Whitespace => &WhitespaceSegmenter,
        }
    }
}

impl FromStr for SegmenterKind {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cjk-char" => Ok(SegmenterKind::CjkChar),
            "whitespace" => Ok(SegmenterKind::Whitespace),
            other => Err(TextError::UnknownSegmenter(other.to_string())),
        }
    }
}

/// Segments with the default (CJK-aware) segmenter.
pub fn segment(text: &str) -> SegmentedText {
    CjkCharSegmenter.segment(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedText {
    pub original: String,
    pub words: Vec<String>,
}

impl SegmentedText {
    pub fn n(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// How provider tokens are approximated for pricing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenCounter {
    /// One token per segmented word.
    Word,
    /// `ceil(chars / r)`.
    CharsPerToken(f64),
}

impl Default for TokenCounter {
    fn default() -> Self {
        TokenCounter::CharsPerToken(2.0)
    }
}

impl TokenCounter {
    pub fn chars_per_token(r: f64) -> Result<Self, TextError> {
        if r.is_finite() && r > 0.0 {
            Ok(TokenCounter::CharsPerToken(r))
        } else {
            Err(TextError::InvalidTokenCounter(format!("chars:{r}")))
        }
    }

    pub fn count(&self, text: &str) -> usize {
        match *self {
            TokenCounter::Word => CjkCharSegmenter.word_count(text),
            TokenCounter::CharsPerToken(r) => {
                let chars = text.chars().count();
                if chars == 0 {
                    0
                } else {
                    (chars as f64 / r).ceil() as usize
                }
            }
        }
    }
}

pub fn count_tokens(text: &str, counter: &TokenCounter) -> usize {
    counter.count(text)
}

impl FromStr for TokenCounter {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "word" {
            return Ok(TokenCounter::Word);
        }
        let r = s
            .strip_prefix("chars:")
            .and_then(|r| r.parse::<f64>().ok())
            .ok_or_else(|| TextError::InvalidTokenCounter(s.to_string()))?;
        TokenCounter::chars_per_token(r).map_err(|_| TextError::InvalidTokenCounter(s.to_string()))
    }
}

impl fmt::Display for TokenCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenCounter::Word => f.write_str("word"),
            TokenCounter::CharsPerToken(r) => write!(f, "chars:{r}"),
        }
    }
}

impl Serialize for TokenCounter {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenCounter {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unigram word-frequency model over the knowledge texts.
///
/// With smoothing enabled every vocabulary word gets `(count + 1) / (total + V + 1)`
/// and any unseen word shares the single reserved bucket `1 / (total + V + 1)`.
/// Without smoothing probabilities are plain relative frequencies and unseen
/// words have probability zero (infinite entropy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyModel {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub smoothing: bool,
}

impl FrequencyModel {
    pub fn from_texts<'a, I>(texts: I, segmenter: &dyn Segmenter, smoothing: bool) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for text in texts {
            for word in segmenter.segment_words(text) {
                *counts.entry(word).or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(TextError::EmptyCorpus);
        }
        Ok(FrequencyModel { counts, total, smoothing })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn probability(&self, word: &str) -> f64 {
        let count = self.count(word);
        if self.smoothing {
            let denom = (self.total + self.counts.len() as u64 + 1) as f64;
            (count + 1) as f64 / denom
        } else {
            count as f64 / self.total as f64
        }
    }

    /// Self-information `-log2 p(word)` in bits.
    pub fn word_entropy(&self, word: &str) -> f64 {
        let p = self.probability(word);
        if p >= 1.0 {
            0.0
        } else {
            -p.log2()
        }
    }
}

pub fn build_frequency_model(
    kb: &KnowledgeBase,
    segmenter: &dyn Segmenter,
    smoothing: bool,
) -> Result<FrequencyModel, TextError> {
    FrequencyModel::from_texts(kb.documents().iter().map(|d| d.text.as_str()), segmenter, smoothing)
}

pub fn word_entropy(model: &FrequencyModel, word: &str) -> f64 {
    model.word_entropy(word)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceEntropy {
    pub n: usize,
    pub mean_bits: f64,
    /// Accumulated entropy, defined as `mean_bits * n`.
    pub sum_bits: f64,
}

/// Mean and accumulated per-word entropy of `text`.
pub fn sentence_entropy(
    model: &FrequencyModel,
    segmenter: &dyn Segmenter,
    text: &str,
) -> Result<SentenceEntropy, TextError> {
    let words = segmenter.segment_words(text);
    if words.is_empty() {
        return Err(TextError::EmptyText);
    }
    let n = words.len();
    let raw: f64 = words.iter().map(|w| model.word_entropy(w)).sum();
    let mean_bits = raw / n as f64;
    Ok(SentenceEntropy { n, mean_bits, sum_bits: mean_bits * n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn segments_latin_and_cjk() {
        assert_eq!(segment("eat raw fish").words, words(&["eat", "raw", "fish"]));
        assert_eq!(segment("宝宝喝水").words, words(&["宝", "宝", "喝", "水"]));
        assert_eq!(segment("").n(), 0);
        assert_eq!(
            segment("宝宝吃DHA, 好!").words,
            words(&["宝", "宝", "吃", "DHA", "好"])
        );
        assert_eq!(segment("baby's 6-month").words, words(&["baby", "s", "6", "month"]));
    }

    #[test]
    fn join_round_trips() {
        let seg = CjkCharSegmenter;
        let w = words(&["宝", "吃", "DHA", "and", "鱼", "x"]);
        let joined = seg.join(&w);
        assert_eq!(joined, "宝吃DHA and鱼x");
        assert_eq!(seg.segment_words(&joined), w);
        assert_eq!(WhitespaceSegmenter.join(&words(&["a,", "b"])), "a, b");
    }

    #[test]
    fn token_counters() {
        assert_eq!(count_tokens("eat raw fish", &TokenCounter::Word), 3);
        let c4 = TokenCounter::chars_per_token(4.0).unwrap();
        assert_eq!(count_tokens("abcdefghij", &c4), 3);
        assert_eq!(count_tokens("", &c4), 0);
        assert_eq!(count_tokens("", &TokenCounter::Word), 0);
        assert!(TokenCounter::chars_per_token(0.0).is_err());
        assert!(TokenCounter::chars_per_token(-1.0).is_err());
        assert_eq!("chars:4".parse::<TokenCounter>().unwrap(), c4);
        assert_eq!("word".parse::<TokenCounter>().unwrap(), TokenCounter::Word);
        assert!("chars:0".parse::<TokenCounter>().is_err());
        assert!("bytes".parse::<TokenCounter>().is_err());
        assert_eq!(TokenCounter::default(), TokenCounter::CharsPerToken(2.0));
    }

    #[test]
    fn segmenter_kind_parses() {
        assert_eq!("whitespace".parse::<SegmenterKind>().unwrap(), SegmenterKind::Whitespace);
        assert_eq!("cjk-char".parse::<SegmenterKind>().unwrap(), SegmenterKind::CjkChar);
        assert!("jieba".parse::<SegmenterKind>().is_err());
    }

    #[test]
    fn frequency_model_unsmoothed() {
        let m = FrequencyModel::from_texts(["a a b"], &CjkCharSegmenter, false).unwrap();
        assert!((m.probability("a") - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.probability("b") - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.word_entropy("a") - 0.585).abs() < 1e-3);
        assert!((m.word_entropy("b") - 1.585).abs() < 1e-3);
        assert_eq!(m.word_entropy("zzz"), f64::INFINITY);

        let single = FrequencyModel::from_texts(["x"], &CjkCharSegmenter, false).unwrap();
        assert_eq!(single.probability("x"), 1.0);
        assert_eq!(single.word_entropy("x"), 0.0);
    }

    #[test]
    fn frequency_model_smoothed_reserves_unseen_mass() {
        let m = FrequencyModel::from_texts(["a a b"], &CjkCharSegmenter, true).unwrap();
        // total 3, V 2
        assert_eq!(m.probability("unseen"), 1.0 / 6.0);
        let mass: f64 = m.counts.keys().map(|w| m.probability(w)).sum::<f64>() + m.probability("unseen");
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_powers_of_two() {
        let m = FrequencyModel::from_texts(["a b c d"], &CjkCharSegmenter, false).unwrap();
        assert!((m.word_entropy("a") - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(
            FrequencyModel::from_texts(["", "!!"], &CjkCharSegmenter, true),
            Err(TextError::EmptyCorpus)
        );
    }

    #[test]
    fn sentence_entropy_examples() {
        let m = FrequencyModel::from_texts(["a a b"], &CjkCharSegmenter, false).unwrap();
        let e = sentence_entropy(&m, &CjkCharSegmenter, "a b").unwrap();
        assert!((e.mean_bits - 1.085).abs() < 1e-3);
        assert!((e.sum_bits - 2.170).abs() < 1e-3);

        let certain = FrequencyModel::from_texts(["a"], &CjkCharSegmenter, false).unwrap();
        let e = sentence_entropy(&certain, &CjkCharSegmenter, "a a").unwrap();
        assert_eq!((e.mean_bits, e.sum_bits), (0.0, 0.0));

        assert_eq!(sentence_entropy(&m, &CjkCharSegmenter, ""), Err(TextError::EmptyText));
    }
}
