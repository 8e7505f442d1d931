//! Core corpus data types: tokens, gold span annotations, sentences,
//! vocabularies, and embedding tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Padding index, present in vocabularies built with reserved entries.
pub const PAD: usize = 0;
/// Unknown-item index, present in vocabularies built with reserved entries.
pub const UNK: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: Option<String>,
    /// Character-vocabulary indices, one per character of `surface`.
    /// Empty until [`assign_char_ids`](crate::corpus::vocab::assign_char_ids)
    /// runs with a built vocabulary.
    pub char_ids: Vec<usize>,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: Option<String>) -> Self {
        Token {
            surface: surface.into(),
            pos,
            char_ids: Vec::new(),
        }
    }
}

/// A gold entity mention. `start`/`end` are 0-based token indices, both
/// inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
}

impl SpanAnnotation {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        SpanAnnotation { start, end, label: label.into() }
    }

    /// Token count; never zero because `end` is inclusive, so there is no
    /// meaningful `is_empty`.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn overlaps(&self, other: &SpanAnnotation) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// One sentence with its (possibly nested or overlapping) gold mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    /// Position in the source corpus, 0-based; used as the prediction id.
    pub id: usize,
    pub tokens: Vec<Token>,
    pub gold: Vec<SpanAnnotation>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Bounds and duplicate checks for the gold set.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for s in &self.gold {
            if s.start > s.end || s.end >= n {
                return Err(Error::Contract(format!(
                    "span ({}, {}) out of bounds for sentence {} of length {n}",
                    s.start, s.end, self.id
                )));
            }
        }
        for i in 0..self.gold.len() {
            for j in i + 1..self.gold.len() {
                if self.gold[i] == self.gold[j] {
                    return Err(Error::Contract(format!(
                        "duplicate gold span ({}, {}, {}) in sentence {}",
                        self.gold[i].start, self.gold[i].end, self.gold[i].label, self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn gold_boundaries(&self) -> Vec<(usize, usize)> {
        self.gold.iter().map(|s| (s.start, s.end)).collect()
    }
}

/// Bidirectional string↔index map. Vocabularies for words, characters, and
/// POS tags reserve index 0 for padding and 1 for unknowns; the label
/// vocabulary is plain (every index is an entity type).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    items: Vec<String>,
    index: HashMap<String, usize>,
    reserved: usize,
}

impl Vocabulary {
    /// Vocabulary with `<pad>` at [`PAD`] and `<unk>` at [`UNK`].
    pub fn with_reserved() -> Self {
        let mut v = Vocabulary {
            items: Vec::new(),
            index: HashMap::new(),
            reserved: 2,
        };
        v.push("<pad>");
        v.push("<unk>");
        v
    }

    /// Vocabulary without reserved entries (used for entity-type labels).
    pub fn plain() -> Self {
        Vocabulary {
            items: Vec::new(),
            index: HashMap::new(),
            reserved: 0,
        }
    }

    fn push(&mut self, item: &str) -> usize {
        let id = self.items.len();
        self.items.push(item.to_string());
        self.index.insert(item.to_string(), id);
        id
    }

    /// Insert if absent; returns the item's index either way.
    pub fn add(&mut self, item: &str) -> usize {
        match self.index.get(item) {
            Some(&id) => id,
            None => self.push(item),
        }
    }

    pub fn lookup(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    /// Index of `item`, or [`UNK`] when absent. Only valid for vocabularies
    /// built with reserved entries.
    pub fn id_or_unk(&self, item: &str) -> usize {
        debug_assert!(self.reserved == 2);
        self.index.get(item).copied().unwrap_or(UNK)
    }

    pub fn get(&self, id: usize) -> Option<&str> {
        self.items.get(id).map(|s| s.as_str())
    }

    /// Total entries including any reserved ones.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn reserved(&self) -> usize {
        self.reserved
    }

    /// Entries beyond the reserved ones, in index order.
    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.items[self.reserved..].iter().map(|s| s.as_str())
    }

    /// All entries including reserved, in index order (checkpoint layout).
    pub fn all_entries(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.as_str())
    }

    /// Rebuild from a checkpoint's entry list.
    pub fn from_entries(entries: Vec<String>, reserved: usize) -> Result<Self> {
        let mut v = Vocabulary {
            items: Vec::new(),
            index: HashMap::new(),
            reserved,
        };
        for e in entries {
            if v.index.contains_key(&e) {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {e:?}")));
            }
            v.push(&e);
        }
        if reserved == 2 && (v.get(PAD) != Some("<pad>") || v.get(UNK) != Some("<unk>")) {
            return Err(Error::Checkpoint(
                "reserved vocabulary entries out of place".into(),
            ));
        }
        Ok(v)
    }
}

/// A dense embedding matrix with one row per vocabulary entry.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub tensor: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(tensor: Tensor, vocab: &Vocabulary, trainable: bool) -> Result<Self> {
        if tensor.rows() != vocab.len() {
            return Err(Error::Contract(format!(
                "embedding table has {} rows but vocabulary has {} entries",
                tensor.rows(),
                vocab.len()
            )));
        }
        Ok(EmbeddingTable { tensor, trainable })
    }

    pub fn dim(&self) -> usize {
        self.tensor.cols()
    }
}
