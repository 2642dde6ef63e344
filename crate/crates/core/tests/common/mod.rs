//! Fixture helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ragtrim::corpus::{Document, Group, KnowledgeBase};

pub const VOCAB: &[&str] = &[
    "milk", "egg", "honey", "fish", "rice", "tofu", "salt", "sugar", "liver", "nuts", "tea", "coffee", "spinach",
    "mango", "iron", "calcium", "iodine", "folate", "protein", "fiber", "infant", "mother", "baby", "week",
    "month", "daily", "small", "large", "raw", "cooked", "boiled", "fresh", "cold", "warm", "avoid", "limit",
    "safe", "risk", "allergy", "growth", "bone", "blood", "sleep", "water", "soup", "porridge", "bean", "seed",
    "oil", "garlic", "ginger", "pepper", "lemon", "apple", "pear", "grape", "melon", "berry", "kelp", "shrimp",
];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string()).collect()
}

pub fn sentence(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    words(rng, n).join(" ")
}

pub fn doc(id: String, text: String) -> Document {
    Document { id, text, food: "food".into(), group: Group::Infant }
}

/// `n` documents `d000..`, each `lo..=hi` vocabulary words.
pub fn random_kb(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> KnowledgeBase {
    let docs = (0..n).map(|i| doc(format!("d{i:03}"), sentence(rng, lo, hi))).collect();
    KnowledgeBase::new(docs).expect("unique ids")
}
