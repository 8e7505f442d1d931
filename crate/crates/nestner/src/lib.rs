//! Two-stage named-entity recognition engine for flat and nested mentions.
//!
//! The pipeline proposes candidate token spans around every sentence
//! position, scores them with a detector (word features, a sentence-level
//! bidirectional LSTM, and a span scoring layer), prunes overlaps when asked
//! to, then types each surviving span with a context-attentive classifier.
//! Everything runs on a small reverse-mode autodiff tape in plain `f64`, so
//! runs are deterministic for a fixed seed.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod numeric;
pub mod proposal;
pub mod training;

pub use error::{Error, Result};
