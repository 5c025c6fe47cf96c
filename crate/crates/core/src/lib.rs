//! Retriever-feedback pipeline for conversational query rewriting.
//!
//! Stages: conversation ingest, BM25 passage index, LLM rewrite exploration,
//! retriever feedback, preference-data construction, evaluation, and a toy
//! SFT/DPO aligner. The `qrf` binary drives them from a single config.

pub mod config;
pub mod conversation;
pub mod error;
pub mod eval;
pub mod explore;
pub mod feedback;
pub mod index;
pub mod jsonl;
pub mod manifest;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod toy;

pub use error::{Error, Result};
