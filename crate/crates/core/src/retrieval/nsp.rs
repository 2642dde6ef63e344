//! Second-stage selection by next-sentence-prediction probability.
//!
//! The scorer estimates how likely a candidate is to follow the query; the
//! candidate with the highest probability wins, earlier retrieval rank
//! breaking ties.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{Endpoint, HttpError};
use crate::retrieval::bm25::terms;

#[derive(Debug, Error)]
pub enum NspError {
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("NSP scorer failed on candidate \"{doc_id}\": {source}")]
    Candidate {
        doc_id: String,
        #[source]
        source: Box<NspError>,
    },
    #[error("NSP service: {0}")]
    Http(#[from] HttpError),
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
}

pub trait NspScorer: Send + Sync {
    /// Probability in `[0, 1]` that `candidate` follows `query`.
    fn probability(&self, query: &str, candidate: &str) -> Result<f64, NspError>;
}

/// Offline stand-in: Jaccard similarity of lowercased word sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapNspScorer;

impl NspScorer for OverlapNspScorer {
    fn probability(&self, query: &str, candidate: &str) -> Result<f64, NspError> {
        let a: HashSet<String> = terms(query).into_iter().collect();
        let b: HashSet<String> = terms(candidate).into_iter().collect();
        let union = a.union(&b).count();
        if union == 0 {
            return Ok(0.0);
        }
        Ok(a.intersection(&b).count() as f64 / union as f64)
    }
}

/// POST `{text_a, text_b}` → `{probability}`.
#[derive(Debug, Clone)]
pub struct RemoteNspScorer {
    pub endpoint: Endpoint,
}

impl NspScorer for RemoteNspScorer {
    fn probability(&self, query: &str, candidate: &str) -> Result<f64, NspError> {
        let resp = self.endpoint.post_json(&json!({ "text_a": query, "text_b": candidate }))?;
        let p = resp
            .get("probability")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| self.endpoint.invalid("missing numeric `probability`"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(NspError::OutOfRange(p));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NspScorerSpec {
    #[default]
    StubOverlap,
    RemoteHttp { endpoint: Endpoint },
}

impl NspScorerSpec {
    pub fn build(&self) -> Box<dyn NspScorer> {
        match self {
            NspScorerSpec::StubOverlap => Box::new(OverlapNspScorer),
            NspScorerSpec::RemoteHttp { endpoint } => Box::new(RemoteNspScorer { endpoint: endpoint.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NspCandidate {
    pub doc_id: String,
    /// 0-based retrieval rank.
    pub rank: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspScore {
    pub doc_id: String,
    pub rank: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NspSelection {
    pub selected: String,
    /// One score per candidate, in the order the candidates were given.
    pub scores: Vec<NspScore>,
}

impl NspSelection {
    /// Candidates by descending probability, ties by retrieval rank.
    pub fn reranked(&self) -> Vec<&NspScore> {
        let mut v: Vec<&NspScore> = self.scores.iter().collect();
        v.sort_by(|a, b| by_preference(a, b));
        v
    }
}

fn by_preference(a: &NspScore, b: &NspScore) -> Ordering {
    b.probability.total_cmp(&a.probability).then(a.rank.cmp(&b.rank))
}

/// Index of the winning score: highest probability, then lowest rank.
pub fn argmax(scores: &[NspScore]) -> Option<usize> {
    (0..scores.len()).min_by(|&i, &j| by_preference(&scores[i], &scores[j]))
}

/// Scores every candidate (concurrently) and picks the argmax.
pub fn nsp_select(query: &str, candidates: &[NspCandidate], scorer: &dyn NspScorer) -> Result<NspSelection, NspError> {
    if candidates.is_empty() {
        return Err(NspError::NoCandidates);
    }
    let results: Vec<Result<NspScore, NspError>> = candidates
        .par_iter()
        .map(|c| {
            let p = scorer
                .probability(query, &c.text)
                .and_then(|p| if (0.0..=1.0).contains(&p) { Ok(p) } else { Err(NspError::OutOfRange(p)) })
                .map_err(|e| NspError::Candidate { doc_id: c.doc_id.clone(), source: Box::new(e) })?;
            Ok(NspScore { doc_id: c.doc_id.clone(), rank: c.rank, probability: p })
        })
        .collect();
    let scores = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = argmax(&scores).expect("non-empty");
    Ok(NspSelection { selected: scores[best].doc_id.clone(), scores })
}
