//! Entity-level question answering over multi-page scientific articles:
//! ingestion, question generation, dataset I/O, feature extraction, a
//! multimodal entity retriever with its trainer, and evaluation.

pub mod config;
pub mod dataio;
pub mod docmodel;
pub mod error;
pub mod evalkit;
pub mod ingest;
pub mod nn;
pub mod featbank;
pub mod qgen;
pub mod retriever;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
