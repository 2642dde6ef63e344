//! Okapi BM25 over segmented knowledge texts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::KnowledgeBase;
use crate::retrieval::{rank_top_k, Method, RankedHits};
use crate::text::{CjkCharSegmenter, Segmenter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Lowercased words, as indexed and queried.
pub fn terms(text: &str) -> Vec<String> {
    CjkCharSegmenter.segment_words(text).into_iter().map(|w| w.to_lowercase()).collect()
}

/// Distinct terms in first-occurrence order.
pub fn unique_terms(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    terms(text).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_len: Vec<usize>,
    tf: Vec<HashMap<String, u32>>,
    df: HashMap<String, u32>,
    avgdl: f64,
}

impl Bm25Index {
    /// Documents are indexed in id order, so statistics and scores do not
    /// depend on corpus insertion order.
    pub fn build(kb: &KnowledgeBase, params: Bm25Params) -> Self {
        let mut docs: Vec<_> = kb.documents().iter().collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut tf = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, u32> = HashMap::new();
        for d in docs {
            let words = terms(&d.text);
            let mut counts: HashMap<String, u32> = HashMap::new();
            for w in &words {
                *counts.entry(w.clone()).or_insert(0) += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
            doc_ids.push(d.id.clone());
            doc_len.push(words.len());
            tf.push(counts);
        }
        let total: usize = doc_len.iter().sum();
        let avgdl = if doc_len.is_empty() { 0.0 } else { total as f64 / doc_len.len() as f64 };
        Bm25Index { params, doc_ids, doc_len, tf, df, avgdl }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn df(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score_doc(&self, i: usize, query_terms: &[String], params: Bm25Params) -> f64 {
        let len_ratio = if self.avgdl > 0.0 { self.doc_len[i] as f64 / self.avgdl } else { 0.0 };
        let norm = params.k1 * (1.0 - params.b + params.b * len_ratio);
        query_terms
            .iter()
            .map(|t| match self.tf[i].get(t) {
                Some(&f) => {
                    let f = f as f64;
                    self.idf(t) * f * (params.k1 + 1.0) / (f + norm)
                }
                None => 0.0,
            })
            .sum()
    }

    pub fn scores(&self, query: &str) -> Vec<(String, f64)> {
        self.scores_with(query, self.params)
    }

    pub fn scores_with(&self, query: &str, params: Bm25Params) -> Vec<(String, f64)> {
        let q = unique_terms(query);
        (0..self.len()).map(|i| (self.doc_ids[i].clone(), self.score_doc(i, &q, params))).collect()
    }

    pub fn search(&self, query: &str, k: usize) -> RankedHits {
        self.search_with(query, k, self.params)
    }

    pub fn search_with(&self, query: &str, k: usize, params: Bm25Params) -> RankedHits {
        RankedHits::new(Method::Bm25, rank_top_k(self.scores_with(query, params), k))
    }

    /// Scores only `ids`, using whole-corpus statistics.
    pub fn search_subset(&self, query: &str, ids: &[String], k: usize, params: Bm25Params) -> RankedHits {
        let q = unique_terms(query);
        let scored = ids
            .iter()
            .filter_map(|id| self.doc_ids.binary_search(id).ok())
            .map(|i| (self.doc_ids[i].clone(), self.score_doc(i, &q, params)))
            .collect();
        RankedHits::new(Method::Bm25, rank_top_k(scored, k))
    }
}

pub fn bm25_build(kb: &KnowledgeBase, k1: f64, b: f64) -> Bm25Index {
    Bm25Index::build(kb, Bm25Params { k1, b })
}

pub fn bm25_search(idx: &Bm25Index, query: &str, k: usize) -> RankedHits {
    idx.search(query, k)
}
