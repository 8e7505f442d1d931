//! Shared representation machinery: the Word Processor (embeddings plus a
//! character recurrence), contextual-embedding mixing, and the Sentence
//! Processor that produces the per-token features f_k.

pub mod context;
pub mod sentence;
pub mod word;

pub use context::{load_context_file, ContextLayers, ContextProvider, MixParams};
pub use sentence::SentenceProcessor;
pub use word::{WordDims, WordProcessor};
