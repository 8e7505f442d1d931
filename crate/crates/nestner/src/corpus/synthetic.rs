//! Deterministic synthetic corpus with nested mentions.
//!
//! A small template grammar produces sentences where an outer mention
//! contains one or two inner mentions (the "the X embassy in Y" pattern:
//! a facility span covering two place names), alongside flat sentences and
//! entity-free filler. Every generated span fits within the proposal length
//! cap, so a detector with standard settings can reach all of them.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::types::{Sentence, SpanAnnotation, Token};

/// Stream id reserved for corpus generation so training streams never
/// overlap it.
const GENERATOR_STREAM: u64 = 7;

#[derive(Debug, Clone)]
pub struct GrammarConfig {
    /// Probability that a sentence uses a nesting template.
    pub nested_prob: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { nested_prob: 0.45 }
    }
}

const PLACES: [&str; 12] = [
    "France", "China", "Japan", "Brazil", "Kenya", "Norway", "Peru", "Canada", "Chile", "Egypt",
    "India", "Spain",
];
const FIRST_NAMES: [&str; 8] = [
    "Alice", "Boris", "Carmen", "Dmitri", "Elena", "Farid", "Greta", "Hugo",
];
const LAST_NAMES: [&str; 8] = [
    "Tanaka", "Okafor", "Larsen", "Moreau", "Silva", "Novak", "Fischer", "Demir",
];
const COMPANIES: [&str; 5] = ["Acme", "Globex", "Initech", "Umbrella", "Hooli"];
const OPENERS: [&str; 3] = ["yesterday", "meanwhile", "reportedly"];

fn pos_of(word: &str) -> &'static str {
    match word {
        "the" | "a" => "DT",
        "in" | "of" | "with" => "IN",
        "visited" | "hired" | "signed" | "reopened" | "were" | "met" => "VBD",
        "." => ".",
        "yesterday" | "meanwhile" | "reportedly" => "RB",
        w if w.chars().next().is_some_and(char::is_uppercase) => "NNP",
        _ => "NN",
    }
}

struct Draft {
    words: Vec<String>,
    gold: Vec<SpanAnnotation>,
}

impl Draft {
    fn new() -> Self {
        Draft { words: Vec::new(), gold: Vec::new() }
    }

    fn word(&mut self, w: &str) -> usize {
        self.words.push(w.to_string());
        self.words.len() - 1
    }

    fn mention(&mut self, words: &[&str], label: &str) -> (usize, usize) {
        let start = self.words.len();
        for w in words {
            self.word(w);
        }
        let end = self.words.len() - 1;
        self.gold.push(SpanAnnotation::new(start, end, label));
        (start, end)
    }
}

fn nested_template(rng: &mut ChaCha8Rng, d: &mut Draft) {
    match rng.random_range(0..3u8) {
        0 => {
            // FAC "the G embassy in G'" containing two GPEs
            let g1 = *PLACES.choose(rng).unwrap();
            let g2 = *PLACES.choose(rng).unwrap();
            let start = d.word("the");
            d.mention(&[g1], "GPE");
            d.word("embassy");
            d.word("in");
            let (_, end) = d.mention(&[g2], "GPE");
            d.gold.push(SpanAnnotation::new(start, end, "FAC"));
            d.word("reopened");
            d.word(".");
        }
        1 => {
            // ORG "the university of G" containing a GPE
            let g = *PLACES.choose(rng).unwrap();
            let start = d.word("the");
            d.word("university");
            d.word("of");
            let (_, end) = d.mention(&[g], "GPE");
            d.gold.push(SpanAnnotation::new(start, end, "ORG"));
            d.word("hired");
            let f = *FIRST_NAMES.choose(rng).unwrap();
            let l = *LAST_NAMES.choose(rng).unwrap();
            d.mention(&[f, l], "PER");
            d.word(".");
        }
        _ => {
            // ORG "the L institute" containing a PER surname
            let l = *LAST_NAMES.choose(rng).unwrap();
            let start = d.word("the");
            let (_, per_end) = d.mention(&[l], "PER");
            d.word("institute");
            d.gold.push(SpanAnnotation::new(start, per_end + 1, "ORG"));
            d.word("met");
            d.mention(&[*PLACES.choose(rng).unwrap()], "GPE");
            d.word(".");
        }
    }
}

fn flat_template(rng: &mut ChaCha8Rng, d: &mut Draft) {
    match rng.random_range(0..4u8) {
        0 => {
            let f = *FIRST_NAMES.choose(rng).unwrap();
            let l = *LAST_NAMES.choose(rng).unwrap();
            d.mention(&[f, l], "PER");
            d.word("visited");
            d.mention(&[*PLACES.choose(rng).unwrap()], "GPE");
            d.word(".");
        }
        1 => {
            d.mention(&[*COMPANIES.choose(rng).unwrap()], "ORG");
            d.word("hired");
            let f = *FIRST_NAMES.choose(rng).unwrap();
            let l = *LAST_NAMES.choose(rng).unwrap();
            d.mention(&[f, l], "PER");
            d.word(".");
        }
        2 => {
            d.mention(&[*PLACES.choose(rng).unwrap()], "GPE");
            d.word("signed");
            d.word("a");
            d.word("treaty");
            d.word("with");
            d.mention(&[*PLACES.choose(rng).unwrap()], "GPE");
            d.word(".");
        }
        _ => {
            d.word("markets");
            d.word("were");
            d.word("quiet");
            d.word(".");
        }
    }
}

/// Generate `n_sentences` sentences. Same seed, same corpus, always.
pub fn gen_synthetic_nested(
    seed: u64,
    n_sentences: usize,
    config: &GrammarConfig,
) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATOR_STREAM);
    let mut out = Vec::with_capacity(n_sentences);
    for id in 0..n_sentences {
        let mut d = Draft::new();
        // occasional sentence opener shifts every span, exercising offsets
        if rng.random::<f64>() < 0.3 {
            d.word(OPENERS[rng.random_range(0..OPENERS.len())]);
        }
        if rng.random::<f64>() < config.nested_prob {
            nested_template(&mut rng, &mut d);
        } else {
            flat_template(&mut rng, &mut d);
        }
        let tokens = d
            .words
            .iter()
            .map(|w| Token::new(w.clone(), Some(pos_of(w).to_string())))
            .collect();
        let s = Sentence { id, tokens, gold: d.gold };
        debug_assert!(s.validate().is_ok());
        out.push(s);
    }
    out
}

/// Offsets in `Draft::mention` are absolute from the sentence start, so the
/// opener-word shift happens for free; nothing post-processes spans.
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let cfg = GrammarConfig::default();
        let a = gen_synthetic_nested(42, 50, &cfg);
        let b = gen_synthetic_nested(42, 50, &cfg);
        assert_eq!(a, b);
        let c = gen_synthetic_nested(43, 50, &cfg);
        assert_ne!(a, c);
    }

    #[test]
    fn all_spans_in_bounds_and_short() {
        let ss = gen_synthetic_nested(1, 500, &GrammarConfig::default());
        for s in &ss {
            s.validate().unwrap();
            for g in &s.gold {
                assert!(g.len() <= 6, "span {g:?} too long");
            }
        }
    }

    #[test]
    fn nesting_rate_is_within_band() {
        let ss = gen_synthetic_nested(7, 1000, &GrammarConfig::default());
        let nested = ss
            .iter()
            .filter(|s| {
                s.gold
                    .iter()
                    .enumerate()
                    .any(|(i, a)| s.gold[i + 1..].iter().any(|b| a.overlaps(b)))
            })
            .count();
        let rate = nested as f64 / ss.len() as f64;
        assert!((0.30..=0.70).contains(&rate), "nesting rate {rate}");
    }

    #[test]
    fn nested_sentences_contain_proper_containment() {
        let ss = gen_synthetic_nested(3, 200, &GrammarConfig { nested_prob: 1.0 });
        for s in &ss {
            // each nested template has an outer span strictly containing
            // at least one inner span
            let has_containment = s.gold.iter().any(|outer| {
                s.gold.iter().any(|inner| {
                    inner != outer
                        && outer.start <= inner.start
                        && inner.end <= outer.end
                        && inner.len() < outer.len()
                })
            });
            assert!(has_containment, "sentence {:?}", s.tokens);
        }
    }

    #[test]
    fn pos_column_is_always_present() {
        let ss = gen_synthetic_nested(11, 100, &GrammarConfig::default());
        for s in &ss {
            for t in &s.tokens {
                assert!(t.pos.is_some());
            }
        }
    }
}
