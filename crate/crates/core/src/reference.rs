//! Published headline numbers, kept as labeled metadata for reports.
//! Nothing in the crate asserts against them: they need the original model
//! and dataset to reproduce.

use serde::{Deserialize, Serialize};

pub const PUBLISHED_RESULTS: &str = include_str!("../../../reference/published_results.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValue {
    pub key: String,
    pub value: f64,
    pub unit: String,
    pub setting: String,
}

pub fn published_results() -> Vec<ReferenceValue> {
    PUBLISHED_RESULTS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("shipped reference file is valid"))
        .collect()
}

pub fn lookup(key: &str) -> Option<ReferenceValue> {
    published_results().into_iter().find(|r| r.key == key)
}
