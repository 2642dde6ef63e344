//! Sparse, dense and cascaded retrieval, followed by optional NSP selection.

pub mod bm25;
pub mod nsp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, KnowledgeBase};
use crate::embedding::{index_build, EmbedError, EmbeddingProvider, VectorIndex};

pub use bm25::{bm25_build, bm25_search, Bm25Index, Bm25Params};
pub use nsp::{nsp_select, NspCandidate, NspError, NspScore, NspScorer, NspScorerSpec, NspSelection, OverlapNspScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Dense,
    Bm25,
    DenseThenBm25,
    Bm25ThenDense,
}

impl Method {
    pub fn is_cascade(self) -> bool {
        matches!(self, Method::DenseThenBm25 | Method::Bm25ThenDense)
    }

    pub fn uses_embeddings(self) -> bool {
        self != Method::Bm25
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Bm25 => "bm25",
            Method::DenseThenBm25 => "dense_then_bm25",
            Method::Bm25ThenDense => "bm25_then_dense",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Method::Dense, Method::Bm25, Method::DenseThenBm25, Method::Bm25ThenDense]
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown retrieval method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Retrieval output: unique ids with non-increasing scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHits {
    pub method: Method,
    pub hits: Vec<Hit>,
}

impl RankedHits {
    pub fn new(method: Method, hits: Vec<Hit>) -> Self {
        RankedHits { method, hits }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.doc_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Sorts by descending score, ascending id on ties, and keeps the first `k`.
pub fn rank_top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<Hit> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored.into_iter().map(|(doc_id, score)| Hit { doc_id, score }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NspMode {
    /// Context is the single highest-probability candidate.
    #[default]
    SelectOne,
    /// Context is every candidate, reordered by probability.
    RerankAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NspConfig {
    pub enabled: bool,
    pub scorer: NspScorerSpec,
    pub mode: NspMode,
}

impl Default for NspConfig {
    fn default() -> Self {
        NspConfig { enabled: true, scorer: NspScorerSpec::StubOverlap, mode: NspMode::SelectOne }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub method: Method,
    /// Final pool size.
    pub k: usize,
    /// First-stage pool size for cascades.
    pub q: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub nsp: NspConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { method: Method::Dense, k: 3, q: 10, bm25_k1: 1.5, bm25_b: 0.75, nsp: NspConfig::default() }
    }
}

impl RetrievalConfig {
    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params { k1: self.bm25_k1, b: self.bm25_b }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: String| Err(RetrievalError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.method.is_cascade() && self.q < self.k {
            return bad(format!("cascade needs q >= k (q={}, k={})", self.q, self.k));
        }
        if !(self.bm25_k1 > 0.0) {
            return bad(format!("bm25_k1 must be positive, got {}", self.bm25_k1));
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return bad(format!("bm25_b must be in [0, 1], got {}", self.bm25_b));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("knowledge base is empty")]
    EmptyCorpus,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Nsp(#[from] NspError),
    #[error("vector index does not match the knowledge base: {0}")]
    IndexMismatch(String),
}

pub fn dense_search(
    vidx: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    query: &str,
    k: usize,
) -> Result<RankedHits, EmbedError> {
    let q = crate::embedding::embed(provider, query)?;
    vidx.search(&q, k)
}

/// Holds the knowledge base with both of its indices.
pub struct Retriever {
    kb: KnowledgeBase,
    bm25: Bm25Index,
    vectors: VectorIndex,
    provider: Box<dyn EmbeddingProvider>,
}

impl fmt::Debug for Retriever {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Retriever").field("docs", &self.kb.len()).field("dim", &self.vectors.dim()).finish()
    }
}

impl Retriever {
    pub fn new(kb: KnowledgeBase, provider: Box<dyn EmbeddingProvider>) -> Result<Self, RetrievalError> {
        if kb.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let vectors = index_build(&kb, provider.as_ref())?;
        Self::with_index(kb, vectors, provider)
    }

    /// Uses a prebuilt (e.g. loaded from disk) vector index.
    pub fn with_index(
        kb: KnowledgeBase,
        vectors: VectorIndex,
        provider: Box<dyn EmbeddingProvider>,
    ) -> Result<Self, RetrievalError> {
        if kb.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        if vectors.dim() != provider.dim() {
            return Err(RetrievalError::IndexMismatch(format!(
                "index dim {} but provider dim {}",
                vectors.dim(),
                provider.dim()
            )));
        }
        let mut kb_ids: Vec<&str> = kb.documents().iter().map(|d| d.id.as_str()).collect();
        kb_ids.sort_unstable();
        if kb_ids != vectors.ids().iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(RetrievalError::IndexMismatch("document ids differ".into()));
        }
        let bm25 = Bm25Index::build(&kb, Bm25Params::default());
        Ok(Retriever { kb, bm25, vectors, provider })
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn bm25(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.vectors
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn dense_search(&self, query: &str, k: usize) -> Result<RankedHits, RetrievalError> {
        Ok(dense_search(&self.vectors, self.provider.as_ref(), query, k)?)
    }

    pub fn bm25_search(&self, query: &str, k: usize, params: Bm25Params) -> RankedHits {
        self.bm25.search_with(query, k, params)
    }

    /// Stage 1 takes the top `q` (clamped to the corpus size) with one method;
    /// stage 2 re-scores only those documents with the other and keeps `k`.
    pub fn cascade_search(&self, cfg: &RetrievalConfig, query: &str) -> Result<RankedHits, RetrievalError> {
        cfg.validate()?;
        let q = cfg.q.min(self.kb.len());
        let params = cfg.bm25_params();
        let stage2 = match cfg.method {
            Method::DenseThenBm25 => {
                let pool = self.dense_search(query, q)?;
                let ids: Vec<String> = pool.hits.into_iter().map(|h| h.doc_id).collect();
                self.bm25.search_subset(query, &ids, cfg.k, params)
            }
            Method::Bm25ThenDense => {
                let pool = self.bm25.search_with(query, q, params);
                let ids: Vec<String> = pool.hits.into_iter().map(|h| h.doc_id).collect();
                let qv = crate::embedding::embed(self.provider.as_ref(), query)?;
                self.vectors.search_subset(&qv, &ids, cfg.k)?
            }
            other => return Err(RetrievalError::InvalidConfig(format!("{other} is not a cascade"))),
        };
        Ok(RankedHits::new(cfg.method, stage2.hits))
    }

    /// Runs the configured method and returns the top-`k` pool.
    pub fn search(&self, cfg: &RetrievalConfig, query: &str) -> Result<RankedHits, RetrievalError> {
        cfg.validate()?;
        match cfg.method {
            Method::Dense => self.dense_search(query, cfg.k),
            Method::Bm25 => Ok(self.bm25_search(query, cfg.k, cfg.bm25_params())),
            _ => self.cascade_search(cfg, query),
        }
    }

    pub fn candidates(&self, hits: &RankedHits) -> Vec<NspCandidate> {
        hits.hits
            .iter()
            .enumerate()
            .filter_map(|(rank, h)| {
                self.kb.get(&h.doc_id).map(|d| NspCandidate { doc_id: d.id.clone(), rank, text: d.text.clone() })
            })
            .collect()
    }

    /// Retrieval plus (optional) NSP selection; yields the documents that
    /// go into the prompt, in order.
    pub fn retrieve_context(
        &self,
        cfg: &RetrievalConfig,
        query: &str,
        scorer: &dyn NspScorer,
    ) -> Result<RetrievedContext, RetrievalError> {
        let hits = self.search(cfg, query)?;
        let candidates = self.candidates(&hits);
        let (order, nsp) = apply_nsp(&cfg.nsp, query, &candidates, scorer)?;
        let documents = order.iter().filter_map(|id| self.kb.get(id).cloned()).collect();
        Ok(RetrievedContext { hits, nsp, documents })
    }
}

/// Prompt document order after NSP: the winner alone, every candidate by
/// probability, or retrieval order when NSP is off or there are no candidates.
pub fn apply_nsp(
    cfg: &NspConfig,
    query: &str,
    candidates: &[NspCandidate],
    scorer: &dyn NspScorer,
) -> Result<(Vec<String>, Option<NspSelection>), NspError> {
    if !cfg.enabled || candidates.is_empty() {
        return Ok((candidates.iter().map(|c| c.doc_id.clone()).collect(), None));
    }
    let sel = nsp_select(query, candidates, scorer)?;
    let order = match cfg.mode {
        NspMode::SelectOne => vec![sel.selected.clone()],
        NspMode::RerankAll => sel.reranked().into_iter().map(|s| s.doc_id.clone()).collect(),
    };
    Ok((order, Some(sel)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub hits: RankedHits,
    pub nsp: Option<NspSelection>,
    pub documents: Vec<Document>,
}
