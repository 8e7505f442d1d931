//! Pretrained word-vector loading (GloVe-style text format).
//!
//! Each line is a token followed by its vector components, whitespace
//! separated. Lookup tries the exact surface first and falls back to the
//! lowercased form; vocabulary words absent from the file get rows drawn
//! uniformly from [−0.25, 0.25]. The padding row stays zero.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::types::{EmbeddingTable, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Outcome of a load: the table plus how many file lines were skipped as
/// unparseable.
#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    pub skipped_lines: usize,
}

pub fn load_pretrained_embeddings<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    expected_dim: usize,
    rng: &mut R,
) -> Result<LoadedEmbeddings> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    // Only keep vectors for words we can actually use.
    let mut wanted: HashSet<String> = HashSet::new();
    for w in vocab.entries() {
        wanted.insert(w.to_string());
        wanted.insert(w.to_lowercase());
    }

    let mut dim: Option<usize> = None;
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = match parts.next() {
            Some(w) => w,
            None => {
                skipped += 1;
                continue;
            }
        };
        let vals: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) if !v.is_empty() => v,
            _ => {
                skipped += 1;
                continue;
            }
        };
        match dim {
            None => {
                if vals.len() != expected_dim {
                    return Err(Error::Config(format!(
                        "embedding file {} has dimension {}, configured dimension is {expected_dim}",
                        path.display(),
                        vals.len()
                    )));
                }
                dim = Some(vals.len());
            }
            Some(d) => {
                if vals.len() != d {
                    skipped += 1;
                    continue;
                }
            }
        }
        if wanted.contains(word) && !vectors.contains_key(word) {
            vectors.insert(word.to_string(), vals);
        }
    }

    let mut matrix = vec![0.0; vocab.len() * expected_dim];
    for (id, word) in vocab.all_entries().enumerate() {
        if id == PAD {
            continue; // padding row stays zero
        }
        let row = &mut matrix[id * expected_dim..(id + 1) * expected_dim];
        let hit = vectors
            .get(word)
            .or_else(|| vectors.get(&word.to_lowercase()));
        match hit {
            Some(v) => row.copy_from_slice(v),
            None => {
                for r in row.iter_mut() {
                    *r = rng.random_range(-0.25..0.25);
                }
            }
        }
    }
    let tensor = Tensor::new(vec![vocab.len(), expected_dim], matrix)?;
    Ok(LoadedEmbeddings {
        table: EmbeddingTable::new(tensor, vocab, true)?,
        skipped_lines: skipped,
    })
}
