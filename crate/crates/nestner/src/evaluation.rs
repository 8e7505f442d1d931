//! Exact-match scoring for flat and nested predictions.
//!
//! A prediction matches a gold annotation when their (start, end) agree and,
//! for typed scoring, the labels agree too. Each gold annotation is consumed
//! by at most one prediction, so per-sentence matching reduces to summing
//! `min(predicted_count, gold_count)` over distinct keys. Metrics are
//! micro-averaged over the corpus (the CoNLL convention); per-type rows are
//! diagnostics. Zero denominators score 0 by convention.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::classifier::{predict_entities, ClassifierModel, EntityCandidate};
use crate::corpus::types::{Sentence, SpanAnnotation, Vocabulary};
use crate::detector::{DetectMode, DetectorModel};
use crate::encoder::context::ContextProvider;
use crate::error::{Error, Result};
use crate::exec::map_slice;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_type: BTreeMap<String, TypeScore>,
}

/// Detector-only scoring plus the count of gold spans no proposal geometry
/// can reach (length > R): these are certain recall misses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorEval {
    pub report: ScoreReport,
    pub gold_longer_than_limit: usize,
}

fn prf(matched: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Micro exact-match score. `predictions[i]` and `golds[i]` belong to the
/// same sentence. With `typed` off, labels are ignored and only span
/// boundaries must agree.
pub fn score(
    predictions: &[Vec<SpanAnnotation>],
    golds: &[Vec<SpanAnnotation>],
    typed: bool,
) -> Result<ScoreReport> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} prediction sentences vs {} gold sentences",
            predictions.len(),
            golds.len()
        )));
    }
    // key: (start, end, label-or-empty); counts per sentence
    let key = |s: &SpanAnnotation| {
        (s.start, s.end, if typed { s.label.clone() } else { String::new() })
    };
    let mut matched = 0usize;
    let mut predicted = 0usize;
    let mut gold_total = 0usize;
    let mut per_type: BTreeMap<String, TypeScore> = BTreeMap::new();
    for (preds, gold) in predictions.iter().zip(golds) {
        let mut seen = std::collections::BTreeSet::new();
        for p in preds {
            if !seen.insert((p.start, p.end, p.label.clone())) {
                return Err(Error::Contract(format!(
                    "duplicate prediction ({}, {}, {})",
                    p.start, p.end, p.label
                )));
            }
        }
        let mut pred_counts: BTreeMap<(usize, usize, String), usize> = BTreeMap::new();
        for p in preds {
            *pred_counts.entry(key(p)).or_insert(0) += 1;
        }
        let mut gold_counts: BTreeMap<(usize, usize, String), usize> = BTreeMap::new();
        for g in gold {
            *gold_counts.entry(key(g)).or_insert(0) += 1;
        }
        predicted += preds.len();
        gold_total += gold.len();
        let mut bump = |label: &str, m: usize, p: usize, g: usize| {
            let row = per_type.entry(label.to_string()).or_insert(TypeScore {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                gold: 0,
                predicted: 0,
                matched: 0,
            });
            row.matched += m;
            row.predicted += p;
            row.gold += g;
        };
        if typed {
            for (k, &pc) in &pred_counts {
                let gc = gold_counts.get(k).copied().unwrap_or(0);
                matched += pc.min(gc);
                bump(&k.2, pc.min(gc), pc, 0);
            }
            for (k, &gc) in &gold_counts {
                bump(&k.2, 0, 0, gc);
            }
        } else {
            for (k, &pc) in &pred_counts {
                matched += pc.min(gold_counts.get(k).copied().unwrap_or(0));
            }
        }
    }
    for row in per_type.values_mut() {
        let (p, r, f1) = prf(row.matched, row.predicted, row.gold);
        row.precision = p;
        row.recall = r;
        row.f1 = f1;
    }
    let (precision, recall, f1) = prf(matched, predicted, gold_total);
    Ok(ScoreReport {
        precision,
        recall,
        f1,
        gold: gold_total,
        predicted,
        matched,
        per_type,
    })
}

/// Partition sentence indices into (overlapping, non-overlapping): a
/// sentence is overlapping iff some pair of its gold spans shares a token.
pub fn split_overlap_portions(corpus: &[Sentence]) -> (Vec<usize>, Vec<usize>) {
    let mut overlapping = Vec::new();
    let mut disjoint = Vec::new();
    for (i, s) in corpus.iter().enumerate() {
        let has_overlap = s
            .gold
            .iter()
            .enumerate()
            .any(|(a, x)| s.gold[a + 1..].iter().any(|y| x.overlaps(y)));
        if has_overlap {
            overlapping.push(i);
        } else {
            disjoint.push(i);
        }
    }
    (overlapping, disjoint)
}

/// Typed annotations from classified candidates, resolving label indices
/// through the label vocabulary.
pub fn candidates_to_annotations(
    candidates: &[EntityCandidate],
    labels: &Vocabulary,
) -> Result<Vec<SpanAnnotation>> {
    candidates
        .iter()
        .map(|c| {
            let idx = c
                .label
                .ok_or_else(|| Error::Contract("unclassified candidate in typed scoring".into()))?;
            let name = labels.get(idx).ok_or_else(|| {
                Error::Contract(format!("label index {idx} outside the label vocabulary"))
            })?;
            Ok(SpanAnnotation::new(c.start, c.end, name))
        })
        .collect()
}

/// Span-only evaluation of a frozen detector over a corpus.
pub fn detector_eval(
    detector: &DetectorModel,
    corpus: &[Sentence],
    provider: &ContextProvider,
    mode: DetectMode,
) -> Result<DetectorEval> {
    let detected = map_slice(corpus, |s| detector.detect(s, provider, mode))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<Vec<SpanAnnotation>> = detected
        .iter()
        .map(|props| props.iter().map(|p| SpanAnnotation::new(p.start, p.end, "")).collect())
        .collect();
    // span-only gold: distinct boundaries, since two types on one span are
    // still a single detectable span
    let golds: Vec<Vec<SpanAnnotation>> = corpus
        .iter()
        .map(|s| {
            let mut spans: Vec<(usize, usize)> = s.gold.iter().map(|g| (g.start, g.end)).collect();
            spans.sort_unstable();
            spans.dedup();
            spans.into_iter().map(|(a, b)| SpanAnnotation::new(a, b, "")).collect()
        })
        .collect();
    let report = score(&predictions, &golds, false)?;
    let gold_longer_than_limit = corpus
        .iter()
        .flat_map(|s| &s.gold)
        .filter(|g| g.len() > detector.r())
        .count();
    Ok(DetectorEval { report, gold_longer_than_limit })
}

/// Typed end-to-end evaluation: detector candidates, classifier types,
/// NONE dropped, exact-match scoring against gold.
pub fn end_to_end_eval(
    detector: &DetectorModel,
    classifier: &ClassifierModel,
    corpus: &[Sentence],
    provider: &ContextProvider,
    mode: DetectMode,
) -> Result<ScoreReport> {
    let predicted = map_slice(corpus, |s| {
        predict_entities(detector, classifier, s, provider, mode)
            .and_then(|c| candidates_to_annotations(&c, &classifier.vocabs.label))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let golds: Vec<Vec<SpanAnnotation>> = corpus.iter().map(|s| s.gold.clone()).collect();
    score(&predicted, &golds, true)
}

/// Aligned text rendering of a report, one overall row plus per-type rows.
pub fn report_table(title: &str, report: &ScoreReport) -> String {
    let mut out = format!(
        "{title}\n{:<12} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
        "type", "precision", "recall", "f1", "gold", "pred", "match"
    );
    let row = |name: &str, p: f64, r: f64, f1: f64, g: usize, pr: usize, m: usize| {
        format!("{name:<12} {p:>9.4} {r:>9.4} {f1:>9.4} {g:>7} {pr:>7} {m:>7}\n")
    };
    out.push_str(&row(
        "ALL",
        report.precision,
        report.recall,
        report.f1,
        report.gold,
        report.predicted,
        report.matched,
    ));
    for (name, t) in &report.per_type {
        out.push_str(&row(name, t.precision, t.recall, t.f1, t.gold, t.predicted, t.matched));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ann(start: usize, end: usize, label: &str) -> SpanAnnotation {
        SpanAnnotation::new(start, end, label)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = vec![vec![ann(0, 1, "PER"), ann(3, 3, "GPE")], vec![ann(2, 4, "ORG")]];
        let report = score(&gold.clone(), &gold, true).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.gold, 3);
        assert_eq!(report.matched, 3);
    }

    #[test]
    fn empty_predictions_score_zero_by_convention() {
        let gold = vec![vec![ann(0, 1, "PER")]];
        let report = score(&[vec![]], &gold, true).unwrap();
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.f1, 0.0);
    }

    #[test]
    fn nested_partial_credit_hand_count() {
        let gold = vec![vec![ann(1, 4, "FAC"), ann(1, 1, "GPE")]];
        let preds = vec![vec![ann(1, 4, "FAC")]];
        let report = score(&preds, &gold, true).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 0.5);
    }

    #[test]
    fn duplicate_predictions_are_rejected() {
        let preds = vec![vec![ann(0, 1, "PER"), ann(0, 1, "PER")]];
        let gold = vec![vec![ann(0, 1, "PER")]];
        assert!(matches!(score(&preds, &gold, true), Err(Error::Contract(_))));
    }

    #[test]
    fn wrong_type_matches_untyped_but_not_typed() {
        let gold = vec![vec![ann(0, 1, "PER")]];
        let preds = vec![vec![ann(0, 1, "ORG")]];
        let typed = score(&preds, &gold, true).unwrap();
        let untyped = score(&preds, &gold, false).unwrap();
        assert_eq!(typed.matched, 0);
        assert_eq!(untyped.matched, 1);
    }

    #[test]
    fn untyped_score_never_below_typed_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let labels = ["A", "B", "C"];
        for _ in 0..100 {
            let mut golds = Vec::new();
            let mut preds = Vec::new();
            for _ in 0..4 {
                let g: Vec<SpanAnnotation> = (0..rng.random_range(0..4))
                    .map(|_| {
                        let s = rng.random_range(0..6);
                        ann(s, s + rng.random_range(0..3), labels[rng.random_range(0..3)])
                    })
                    .collect();
                // predictions must be duplicate-free
                let mut p: Vec<SpanAnnotation> = Vec::new();
                for _ in 0..rng.random_range(0..4) {
                    let s = rng.random_range(0..6);
                    let cand = ann(s, s + rng.random_range(0..3), labels[rng.random_range(0..3)]);
                    if !p.contains(&cand) {
                        p.push(cand);
                    }
                }
                golds.push(g);
                preds.push(p);
            }
            let typed = score(&preds, &golds, true).unwrap();
            let untyped = score(&preds, &golds, false).unwrap();
            assert!(untyped.matched >= typed.matched);
            assert!(untyped.f1 >= typed.f1 - 1e-12);
        }
    }

    #[test]
    fn order_of_sentences_and_predictions_is_irrelevant() {
        let golds = vec![
            vec![ann(0, 1, "PER"), ann(3, 4, "ORG")],
            vec![ann(2, 2, "GPE")],
            vec![],
        ];
        let preds = vec![
            vec![ann(3, 4, "ORG"), ann(0, 1, "GPE")],
            vec![ann(2, 2, "GPE"), ann(0, 0, "PER")],
            vec![ann(1, 1, "ORG")],
        ];
        let base = score(&preds, &golds, true).unwrap();
        let perm = [2usize, 0, 1];
        let preds_p: Vec<_> = perm
            .iter()
            .map(|&i| {
                let mut v = preds[i].clone();
                v.reverse();
                v
            })
            .collect();
        let golds_p: Vec<_> = perm.iter().map(|&i| golds[i].clone()).collect();
        let shuffled = score(&preds_p, &golds_p, true).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn per_type_rows_add_up_to_the_micro_counts() {
        let golds = vec![vec![ann(0, 1, "PER"), ann(2, 3, "ORG"), ann(5, 5, "ORG")]];
        let preds = vec![vec![ann(0, 1, "PER"), ann(2, 3, "PER"), ann(5, 5, "ORG")]];
        let report = score(&preds, &golds, true).unwrap();
        let sum_matched: usize = report.per_type.values().map(|t| t.matched).sum();
        let sum_pred: usize = report.per_type.values().map(|t| t.predicted).sum();
        let sum_gold: usize = report.per_type.values().map(|t| t.gold).sum();
        assert_eq!(sum_matched, report.matched);
        assert_eq!(sum_pred, report.predicted);
        assert_eq!(sum_gold, report.gold);
        assert_eq!(report.per_type["PER"].gold, 1);
        assert_eq!(report.per_type["PER"].predicted, 2);
        assert_eq!(report.per_type["PER"].matched, 1);
        assert_eq!(report.per_type["ORG"].matched, 1);
    }

    #[test]
    fn mismatched_sentence_counts_are_rejected() {
        assert!(score(&[vec![]], &[], true).is_err());
    }

    #[test]
    fn overlap_split_is_a_partition() {
        use crate::corpus::synthetic::{gen_synthetic_nested, GrammarConfig};
        let corpus = gen_synthetic_nested(11, 60, &GrammarConfig::default());
        let (over, disj) = split_overlap_portions(&corpus);
        assert_eq!(over.len() + disj.len(), corpus.len());
        let mut all: Vec<usize> = over.iter().chain(&disj).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..corpus.len()).collect::<Vec<_>>());
        for &i in &over {
            let s = &corpus[i];
            assert!(s
                .gold
                .iter()
                .enumerate()
                .any(|(a, x)| s.gold[a + 1..].iter().any(|y| x.overlaps(y))));
        }
        // the generator nests at a positive rate, so both portions appear
        assert!(!over.is_empty());
        assert!(!disj.is_empty());
    }

    #[test]
    fn crafted_sentences_land_in_the_right_portion() {
        use crate::corpus::types::Token;
        let mk = |gold: Vec<SpanAnnotation>| Sentence {
            id: 0,
            tokens: (0..6).map(|i| Token::new(format!("w{i}"), None)).collect(),
            gold,
        };
        let corpus = vec![
            mk(vec![ann(0, 3, "FAC"), ann(1, 1, "GPE")]),
            mk(vec![ann(0, 1, "PER"), ann(3, 5, "ORG")]),
        ];
        let (over, disj) = split_overlap_portions(&corpus);
        assert_eq!(over, vec![0]);
        assert_eq!(disj, vec![1]);
    }

    #[test]
    fn label_resolution_errors_are_loud() {
        let mut labels = Vocabulary::plain();
        labels.add("PER");
        let unlabeled = EntityCandidate {
            sentence_id: 0,
            start: 0,
            end: 0,
            p_entity: 0.9,
            label: None,
            p_type: None,
        };
        assert!(candidates_to_annotations(&[unlabeled], &labels).is_err());
        let out_of_range = EntityCandidate {
            sentence_id: 0,
            start: 0,
            end: 0,
            p_entity: 0.9,
            label: Some(7),
            p_type: Some(0.5),
        };
        assert!(candidates_to_annotations(&[out_of_range], &labels).is_err());
    }

    #[test]
    fn table_rendering_has_one_row_per_type_plus_overall() {
        let golds = vec![vec![ann(0, 1, "PER"), ann(2, 3, "ORG")]];
        let report = score(&golds.clone(), &golds, true).unwrap();
        let table = report_table("dev", &report);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 1 + 1 + 1 + 2); // title, header, ALL, two types
        assert!(lines[2].starts_with("ALL"));
    }
}
