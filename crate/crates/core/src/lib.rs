//! Retrieval-augmented question answering with context compression and
//! per-question cost accounting.

pub mod analytics;
pub mod compression;
pub mod corpus;
pub mod cost;
pub mod embedding;
pub mod eval;
pub mod http;
pub mod llm;
pub mod reference;
pub mod retrieval;
pub mod selfinstruct;
pub mod text;
