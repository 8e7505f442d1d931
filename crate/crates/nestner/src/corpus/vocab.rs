//! Vocabulary construction from a loaded corpus.
//!
//! Word, character, and POS vocabularies carry reserved padding/unknown
//! entries; the label vocabulary is plain because the classifier appends its
//! own NONE class after the entity types. Entries are inserted in sorted
//! order so identical corpora always produce identical index assignments.

use std::collections::BTreeMap;

use crate::corpus::types::{Sentence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Vocabularies {
    pub word: Vocabulary,
    pub char: Vocabulary,
    pub pos: Vocabulary,
    pub label: Vocabulary,
}

/// Build all four vocabularies. Words occurring fewer than `min_count`
/// times fall through to the unknown index; characters, POS tags, and
/// labels are kept unconditionally.
pub fn build_vocab(sentences: &[Sentence], min_count: usize) -> Result<Vocabularies> {
    if sentences.is_empty() {
        return Err(Error::Contract("cannot build vocabularies from an empty corpus".into()));
    }
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut chars: BTreeMap<char, ()> = BTreeMap::new();
    let mut pos_tags: BTreeMap<&str, ()> = BTreeMap::new();
    let mut labels: BTreeMap<&str, ()> = BTreeMap::new();
    for s in sentences {
        for t in &s.tokens {
            *word_counts.entry(&t.surface).or_insert(0) += 1;
            for c in t.surface.chars() {
                chars.entry(c).or_insert(());
            }
            if let Some(p) = &t.pos {
                pos_tags.entry(p).or_insert(());
            }
        }
        for g in &s.gold {
            labels.entry(&g.label).or_insert(());
        }
    }

    let mut word = Vocabulary::with_reserved();
    for (w, c) in &word_counts {
        if *c >= min_count {
            word.add(w);
        }
    }
    let mut char_vocab = Vocabulary::with_reserved();
    for c in chars.keys() {
        char_vocab.add(&c.to_string());
    }
    let mut pos = Vocabulary::with_reserved();
    for p in pos_tags.keys() {
        pos.add(p);
    }
    let mut label = Vocabulary::plain();
    for l in labels.keys() {
        label.add(l);
    }
    Ok(Vocabularies {
        word,
        char: char_vocab,
        pos,
        label,
    })
}

/// Fill every token's `char_ids` from the character vocabulary. Unknown
/// characters map to the reserved unknown index, so this works on held-out
/// text too.
pub fn assign_char_ids(sentences: &mut [Sentence], char_vocab: &Vocabulary) {
    for s in sentences {
        for t in &mut s.tokens {
            t.char_ids = t
                .surface
                .chars()
                .map(|c| char_vocab.id_or_unk(&c.to_string()))
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{SpanAnnotation, Token, UNK};

    fn sentence(words: &[&str], gold: Vec<SpanAnnotation>) -> Sentence {
        Sentence {
            id: 0,
            tokens: words.iter().map(|w| Token::new(*w, None)).collect(),
            gold,
        }
    }

    #[test]
    fn min_count_filters_rare_words() {
        let ss = vec![sentence(&["a", "a", "b"], vec![])];
        let v = build_vocab(&ss, 2).unwrap();
        assert!(v.word.lookup("a").is_some());
        assert!(v.word.lookup("b").is_none());
        assert_eq!(v.word.id_or_unk("b"), UNK);
    }

    #[test]
    fn char_vocab_covers_all_characters() {
        let ss = vec![sentence(&["ab"], vec![])];
        let v = build_vocab(&ss, 1).unwrap();
        assert_eq!(v.char.len(), 4, "a, b, plus two reserved");
        assert!(v.char.lookup("a").is_some());
        assert!(v.char.lookup("b").is_some());
    }

    #[test]
    fn label_vocab_is_plain_and_typed() {
        let ss = vec![sentence(
            &["x", "y"],
            vec![
                SpanAnnotation::new(0, 0, "PER"),
                SpanAnnotation::new(1, 1, "ORG"),
            ],
        )];
        let v = build_vocab(&ss, 1).unwrap();
        assert_eq!(v.label.len(), 2);
        assert_eq!(v.label.reserved(), 0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn identical_corpora_produce_identical_indices() {
        let ss = vec![sentence(&["zeta", "alpha", "mid"], vec![])];
        let a = build_vocab(&ss, 1).unwrap();
        let b = build_vocab(&ss, 1).unwrap();
        assert_eq!(a.word, b.word);
        // sorted insertion: alpha < mid < zeta regardless of corpus order
        assert!(a.word.lookup("alpha").unwrap() < a.word.lookup("mid").unwrap());
        assert!(a.word.lookup("mid").unwrap() < a.word.lookup("zeta").unwrap());
    }

    #[test]
    fn char_ids_line_up_with_surfaces() {
        let mut ss = vec![sentence(&["ab", "ba", "aq"], vec![])];
        let v = build_vocab(&ss, 1).unwrap();
        // rebuild vocab from a corpus lacking "q" to force an unknown
        let train = vec![sentence(&["ab", "ba"], vec![])];
        let tv = build_vocab(&train, 1).unwrap();
        assign_char_ids(&mut ss, &tv.char);
        let _ = v;
        for s in &ss {
            for t in &s.tokens {
                assert_eq!(t.char_ids.len(), t.surface.chars().count());
            }
        }
        let a = tv.char.lookup("a").unwrap();
        let b = tv.char.lookup("b").unwrap();
        assert_eq!(ss[0].tokens[0].char_ids, vec![a, b]);
        assert_eq!(ss[0].tokens[1].char_ids, vec![b, a]);
        assert_eq!(ss[0].tokens[2].char_ids, vec![a, UNK]);
    }
}
