//! CoNLL column-format reader for flat NER corpora.
//!
//! Sentences are blank-line-separated blocks of token lines. Each line holds
//! whitespace-separated columns: the surface form first, the NER tag last,
//! and a POS tag in the second column when the line has three or more
//! columns. Document-boundary blocks (`-DOCSTART-`) are kept as ordinary
//! sentences so corpus-level counts match published statistics.
//!
//! Both common tagging schemes are supported. In IOB1, `I-X` opens a mention
//! unless one of type X is already open, and `B-X` only separates two
//! adjacent same-type mentions. In BIO2, every mention opens with `B-X` and
//! a dangling `I-X` is an error. Auto-detection scans for `B-` tags in
//! positions IOB1 would never produce.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::corpus::types::{Sentence, SpanAnnotation, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagScheme {
    Auto,
    Iob1,
    Bio2,
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TagScheme::Auto => "auto",
            TagScheme::Iob1 => "iob1",
            TagScheme::Bio2 => "bio2",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TagScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TagScheme::Auto),
            "iob1" => Ok(TagScheme::Iob1),
            "bio2" => Ok(TagScheme::Bio2),
            other => Err(Error::Config(format!(
                "unknown tag scheme {other:?}; expected auto, iob1, or bio2"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tag {
    O,
    B(String),
    I(String),
}

fn parse_tag(raw: &str) -> Result<Tag> {
    if raw == "O" {
        return Ok(Tag::O);
    }
    if let Some(t) = raw.strip_prefix("B-") {
        if !t.is_empty() {
            return Ok(Tag::B(t.to_string()));
        }
    }
    if let Some(t) = raw.strip_prefix("I-") {
        if !t.is_empty() {
            return Ok(Tag::I(t.to_string()));
        }
    }
    Err(Error::Contract(format!("unrecognized NER tag {raw:?}")))
}

/// One token line: (surface, pos, tag, 1-based source line number).
type Line = (String, Option<String>, Tag, usize);

/// Decide between IOB1 and BIO2 by looking for `B-` tags that IOB1 never
/// emits: at sentence start, after `O`, or after a different type.
fn detect_scheme(blocks: &[Vec<Line>]) -> TagScheme {
    for block in blocks {
        let mut prev: Option<&Tag> = None;
        for (_, _, tag, _) in block {
            if let Tag::B(t) = tag {
                let follows_same_type = match prev {
                    Some(Tag::B(p)) | Some(Tag::I(p)) => p == t,
                    _ => false,
                };
                if !follows_same_type {
                    return TagScheme::Bio2;
                }
            }
            prev = Some(tag);
        }
    }
    TagScheme::Iob1
}

/// Decode one block's tags into spans under the given (concrete) scheme.
fn decode_block(path: &Path, block: &[Line], scheme: TagScheme) -> Result<Vec<SpanAnnotation>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None; // (start index, type)
    for (k, (_, _, tag, line_no)) in block.iter().enumerate() {
        match (tag, scheme) {
            (Tag::O, _) => {
                if let Some((s, t)) = open.take() {
                    spans.push(SpanAnnotation::new(s, k - 1, t));
                }
            }
            (Tag::B(t), TagScheme::Bio2) => {
                if let Some((s, ot)) = open.take() {
                    spans.push(SpanAnnotation::new(s, k - 1, ot));
                }
                open = Some((k, t.clone()));
            }
            (Tag::I(t), TagScheme::Bio2) => match &open {
                Some((_, ot)) if ot == t => {}
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: *line_no,
                        msg: format!("I-{t} without an open B-{t} mention (strict BIO2)"),
                    });
                }
            },
            (Tag::B(t), TagScheme::Iob1) => {
                // closes any open mention, opens a new one (adjacent same-type)
                if let Some((s, ot)) = open.take() {
                    spans.push(SpanAnnotation::new(s, k - 1, ot));
                }
                open = Some((k, t.clone()));
            }
            (Tag::I(t), TagScheme::Iob1) => match &open {
                Some((_, ot)) if ot == t => {}
                _ => {
                    // type change or fresh start both open a mention here
                    if let Some((s, ot)) = open.take() {
                        spans.push(SpanAnnotation::new(s, k - 1, ot));
                    }
                    open = Some((k, t.clone()));
                }
            },
            (_, TagScheme::Auto) => unreachable!("scheme resolved before decoding"),
        }
    }
    if let Some((s, t)) = open {
        spans.push(SpanAnnotation::new(s, block.len() - 1, t));
    }
    Ok(spans)
}

/// Load a CoNLL column file. Returns the sentences and the scheme actually
/// used (meaningful when `scheme` was [`TagScheme::Auto`]).
pub fn load_conll(path: &Path, scheme: TagScheme) -> Result<(Vec<Sentence>, TagScheme)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut blocks: Vec<Vec<Line>> = Vec::new();
    let mut current: Vec<Line> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        let surface = cols[0].to_string();
        let pos = if cols.len() >= 3 {
            Some(cols[1].to_string())
        } else {
            None
        };
        let tag = parse_tag(cols[cols.len() - 1]).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        current.push((surface, pos, tag, line_no));
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let resolved = match scheme {
        TagScheme::Auto => detect_scheme(&blocks),
        s => s,
    };

    let mut sentences = Vec::with_capacity(blocks.len());
    for (id, block) in blocks.iter().enumerate() {
        let gold = decode_block(path, block, resolved)?;
        let tokens = block
            .iter()
            .map(|(surface, pos, _, _)| Token::new(surface.clone(), pos.clone()))
            .collect();
        let s = Sentence { id, tokens, gold };
        s.validate()?;
        sentences.push(s);
    }
    Ok((sentences, resolved))
}

/// Encode non-overlapping spans as strict BIO2 tags. Used by the round-trip
/// property tests and the prediction dump for flat corpora.
pub fn spans_to_bio2(spans: &[SpanAnnotation], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    let mut sorted: Vec<&SpanAnnotation> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[0].overlaps(w[1]) {
            return Err(Error::Contract(format!(
                "cannot BIO2-encode overlapping spans ({}, {}) and ({}, {})",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    for s in sorted {
        if s.end >= len {
            return Err(Error::Contract(format!(
                "span ({}, {}) out of bounds for length {len}",
                s.start, s.end
            )));
        }
        tags[s.start] = format!("B-{}", s.label);
        for t in tags.iter_mut().take(s.end + 1).skip(s.start + 1) {
            *t = format!("I-{}", s.label);
        }
    }
    Ok(tags)
}
