//! Corpus ingestion and preparation: flat CoNLL columns, nested JSON-lines,
//! vocabulary construction, pretrained vectors, statistics, and a seeded
//! synthetic corpus generator.

pub mod conll;
pub mod embeddings;
pub mod jsonl;
pub mod stats;
pub mod synthetic;
pub mod types;
pub mod vocab;

pub use conll::{load_conll, spans_to_bio2, TagScheme};
pub use embeddings::{load_pretrained_embeddings, LoadedEmbeddings};
pub use jsonl::{load_nested_jsonl, save_nested_jsonl, sentence_to_jsonl};
pub use stats::{corpus_stats, stats_table, stats_tsv, CorpusStats};
pub use synthetic::{gen_synthetic_nested, GrammarConfig};
pub use types::{EmbeddingTable, Sentence, SpanAnnotation, Token, Vocabulary, PAD, UNK};
pub use vocab::{assign_char_ids, build_vocab, Vocabularies};
