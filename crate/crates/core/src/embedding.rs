//! Sentence embeddings and an exact (flat) cosine-similarity vector index.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::KnowledgeBase;
use crate::http::{Endpoint, HttpError};
use crate::retrieval::{rank_top_k, Method, RankedHits};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding dimension must be positive")]
    InvalidDim,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("cannot build an index over an empty knowledge base")]
    EmptyCorpus,
    #[error("embedding provider: {0}")]
    Http(#[from] HttpError),
    #[error("embedding document \"{doc_id}\": {source}")]
    Document {
        doc_id: String,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid index file: {0}")]
    Format(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EmbedError::Http(e) => e.is_retryable(),
            EmbedError::Document { source, .. } => source.is_retryable(),
            _ => false,
        }
    }

    pub fn http_status(&self) -> Option<u16> {
        match self {
            EmbedError::Http(e) => e.status(),
            EmbedError::Document { source, .. } => source.http_status(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_dims(a: usize, b: usize) -> Result<(), EmbedError> {
    if a == b {
        Ok(())
    } else {
        Err(EmbedError::DimensionMismatch { expected: a, actual: b })
    }
}

fn cosine_parts(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> Result<f64, EmbedError> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    check_dims(a.dim(), b.dim())?;
    cosine_parts(a.values.iter().copied(), b.values.iter().copied())
}

pub fn l2_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Hashed character-bigram term frequencies, L2-normalized.
///
/// Text is lowercased and framed with start/end sentinels so that single
/// characters still produce bigrams. Buckets are FNV-1a hashes of the
/// bigram's UTF-8 bytes modulo `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceEmbedder {
    dim: usize,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDim);
        }
        Ok(ReferenceEmbedder { dim })
    }
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        ReferenceEmbedder { dim: DEFAULT_DIM }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(text.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut tf = vec![0.0f64; self.dim];
        let mut buf = [0u8; 8];
        for pair in chars.windows(2) {
            let a = pair[0].encode_utf8(&mut buf[..4]).len();
            let b = pair[1].encode_utf8(&mut buf[a..]).len();
            tf[(fnv1a(&buf[..a + b]) % self.dim as u64) as usize] += 1.0;
        }
        let norm = tf.iter().map(|v| v * v).sum::<f64>().sqrt();
        tf.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector { values: tf })
    }
}

/// An OpenAI-style embeddings endpoint: POST `{model, input: [text]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: Endpoint,
    pub model: String,
    pub dim: usize,
}

/// Accepts `{"data":[{"embedding":[..]}]}`, `{"embedding":[..]}` or
/// `{"embeddings":[[..]]}`.
fn extract_vector(resp: &Value) -> Option<Vec<f64>> {
    let arr = resp
        .pointer("/data/0/embedding")
        .or_else(|| resp.get("embedding"))
        .or_else(|| resp.pointer("/embeddings/0"))?
        .as_array()?;
    arr.iter().map(Value::as_f64).collect()
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let resp = self.endpoint.post_json(&json!({ "model": self.model, "input": [text] }))?;
        let values = extract_vector(&resp).ok_or_else(|| self.endpoint.invalid("no float array in response"))?;
        check_dims(self.dim, values.len())?;
        Ok(EmbeddingVector { values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProviderSpec {
    ReferenceHash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    RemoteHttp {
        endpoint: Endpoint,
        model: String,
        dim: usize,
    },
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

impl Default for EmbeddingProviderSpec {
    fn default() -> Self {
        EmbeddingProviderSpec::ReferenceHash { dim: DEFAULT_DIM }
    }
}

impl EmbeddingProviderSpec {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
        Ok(match self {
            EmbeddingProviderSpec::ReferenceHash { dim } => Box::new(ReferenceEmbedder::new(*dim)?),
            EmbeddingProviderSpec::RemoteHttp { endpoint, model, dim } => {
                if *dim == 0 {
                    return Err(EmbedError::InvalidDim);
                }
                Box::new(RemoteEmbedder { endpoint: endpoint.clone(), model: model.clone(), dim: *dim })
            }
        })
    }
}

pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    let v = provider.embed(text)?;
    check_dims(provider.dim(), v.dim())?;
    Ok(v)
}

const MAGIC: &[u8; 4] = b"VIDX";
const VERSION: u32 = 1;

/// Exhaustive cosine-similarity index. Rows are stored as `f32`, the same
/// precision the index file uses, so a persisted index searches identically.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f32>,
}

impl VectorIndex {
    /// Builds from `(id, vector)` pairs; entries are kept sorted by id.
    pub fn from_entries(dim: usize, mut entries: Vec<(String, EmbeddingVector)>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidDim);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(EmbedError::Format(format!("duplicate id \"{}\"", w[0].0)));
        }
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (id, v) in entries {
            check_dims(dim, v.dim())?;
            ids.push(id);
            rows.extend(v.values.iter().map(|&x| x as f32));
        }
        Ok(VectorIndex { dim, ids, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<EmbeddingVector> {
        let i = self.position(id)?;
        Some(EmbeddingVector { values: self.row(i).iter().map(|&x| x as f64).collect() })
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn score_row(&self, i: usize, query: &EmbeddingVector) -> Result<f64, EmbedError> {
        cosine_parts(query.values.iter().copied(), self.row(i).iter().map(|&x| x as f64))
    }

    /// Cosine similarity between `query` and every stored row.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<(String, f64)>, EmbedError> {
        check_dims(self.dim, query.dim())?;
        (0..self.len()).map(|i| Ok((self.ids[i].clone(), self.score_row(i, query)?))).collect()
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RankedHits, EmbedError> {
        if k == 0 {
            return Err(EmbedError::InvalidK);
        }
        Ok(RankedHits::new(Method::Dense, rank_top_k(self.scores(query)?, k)))
    }

    /// Scores only the listed ids (unknown ids are skipped).
    pub fn search_subset(&self, query: &EmbeddingVector, ids: &[String], k: usize) -> Result<RankedHits, EmbedError> {
        if k == 0 {
            return Err(EmbedError::InvalidK);
        }
        check_dims(self.dim, query.dim())?;
        let scored = ids
            .iter()
            .filter_map(|id| self.position(id))
            .map(|i| Ok((self.ids[i].clone(), self.score_row(i, query)?)))
            .collect::<Result<Vec<_>, EmbedError>>()?;
        Ok(RankedHits::new(Method::Dense, rank_top_k(scored, k)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.rows.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in self.row(i) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(EmbedError::InvalidDim);
        }
        let count = r.u64()? as usize;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| EmbedError::Format(format!("id is not UTF-8: {e}")))?
                .to_string();
            if ids.last().is_some_and(|prev: &String| prev.as_str() >= id.as_str()) {
                return Err(EmbedError::Format(format!("ids not strictly sorted at \"{id}\"")));
            }
            ids.push(id);
            for chunk in r.take(dim * 4)?.chunks_exact(4) {
                rows.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
            }
        }
        if r.pos != bytes.len() {
            return Err(EmbedError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(VectorIndex { dim, ids, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let io = |source| EmbedError::Io { path: path.to_path_buf(), source };
        fs::File::create(path).and_then(|mut f| f.write_all(&self.to_bytes())).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })?;
        VectorIndex::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EmbedError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| EmbedError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Embeds every document. Requests fan out over the rayon pool; the first
/// failing document in id order is reported.
pub fn index_build(kb: &KnowledgeBase, provider: &dyn EmbeddingProvider) -> Result<VectorIndex, EmbedError> {
    if kb.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut docs: Vec<_> = kb.documents().iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let results: Vec<Result<(String, EmbeddingVector), EmbedError>> = docs
        .par_iter()
        .map(|d| {
            embed(provider, &d.text)
                .map(|v| (d.id.clone(), v))
                .map_err(|e| EmbedError::Document { doc_id: d.id.clone(), source: Box::new(e) })
        })
        .collect();
    let entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    VectorIndex::from_entries(provider.dim(), entries)
}

pub fn index_search(idx: &VectorIndex, query: &EmbeddingVector, k: usize) -> Result<RankedHits, EmbedError> {
    idx.search(query, k)
}
