//! Corpus-level statistics over sentences and their gold mentions.

use serde::Serialize;

use crate::corpus::types::Sentence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    /// Sentences containing at least one overlapping pair of mentions.
    pub overlap_sentences: usize,
    pub entities: usize,
    /// Mentions that share at least one token with another mention.
    pub overlap_entities: usize,
    /// Mentions longer than the proposal length cap (unreachable spans).
    pub longer_than_r: usize,
    pub max_entity_length: usize,
}

pub fn corpus_stats(sentences: &[Sentence], r: usize) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: sentences.len(),
        overlap_sentences: 0,
        entities: 0,
        overlap_entities: 0,
        longer_than_r: 0,
        max_entity_length: 0,
    };
    for s in sentences {
        stats.entities += s.gold.len();
        let mut overlapping = vec![false; s.gold.len()];
        for i in 0..s.gold.len() {
            stats.max_entity_length = stats.max_entity_length.max(s.gold[i].len());
            if s.gold[i].len() > r {
                stats.longer_than_r += 1;
            }
            for j in i + 1..s.gold.len() {
                if s.gold[i].overlaps(&s.gold[j]) {
                    overlapping[i] = true;
                    overlapping[j] = true;
                }
            }
        }
        let n_overlap = overlapping.iter().filter(|&&o| o).count();
        stats.overlap_entities += n_overlap;
        if n_overlap > 0 {
            stats.overlap_sentences += 1;
        }
    }
    stats
}

/// Two-line TSV rendering: header then values.
pub fn stats_tsv(stats: &CorpusStats) -> String {
    format!(
        "sentences\toverlap_sentences\tentities\toverlap_entities\tlonger_than_r\tmax_entity_length\n{}\t{}\t{}\t{}\t{}\t{}\n",
        stats.sentences,
        stats.overlap_sentences,
        stats.entities,
        stats.overlap_entities,
        stats.longer_than_r,
        stats.max_entity_length
    )
}

/// Aligned human-readable table.
pub fn stats_table(stats: &CorpusStats) -> String {
    let rows = [
        ("sentences", stats.sentences),
        ("with overlapping mentions", stats.overlap_sentences),
        ("entities", stats.entities),
        ("overlapping entities", stats.overlap_entities),
        ("longer than length cap", stats.longer_than_r),
        ("max entity length", stats.max_entity_length),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap();
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}
