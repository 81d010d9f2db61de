//! Induction of executable verifier sets from labeled model outputs.
//!
//! A run seeds candidate bundles from an LLM, evaluates each one on a dev
//! set through sandboxed workers, and searches a DAG of edited bundles,
//! picking the next node to expand by an acquisition score.

pub mod bundle;
pub mod cli;
pub mod context;
pub mod dataset;
pub mod gateway;
pub mod llm;
pub mod scoring;
pub mod search;
pub mod stub;
