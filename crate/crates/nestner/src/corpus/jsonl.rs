//! JSON-lines reader and writer for nested-entity corpora.
//!
//! One object per line: `{"tokens": [...], "pos": [...]?, "entities":
//! [{"start", "end", "type"}, ...]}` with `end` inclusive. Gold spans may
//! nest or overlap arbitrarily; BIO tags cannot express that, which is why
//! nested corpora travel in this standoff form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::types::{Sentence, SpanAnnotation, Token};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pos: Option<Vec<String>>,
    entities: Vec<SpanAnnotation>,
}

pub fn load_nested_jsonl(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let sentence = record_to_sentence(rec, sentences.len()).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        sentences.push(sentence);
    }
    Ok(sentences)
}

fn record_to_sentence(rec: Record, id: usize) -> Result<Sentence> {
    if rec.tokens.is_empty() {
        return Err(Error::Contract("sentence has no tokens".into()));
    }
    if let Some(pos) = &rec.pos {
        if pos.len() != rec.tokens.len() {
            return Err(Error::Contract(format!(
                "{} tokens but {} pos tags",
                rec.tokens.len(),
                pos.len()
            )));
        }
    }
    let tokens: Vec<Token> = rec
        .tokens
        .into_iter()
        .enumerate()
        .map(|(k, surface)| {
            let pos = rec.pos.as_ref().map(|p| p[k].clone());
            Token::new(surface, pos)
        })
        .collect();
    let s = Sentence {
        id,
        tokens,
        gold: rec.entities,
    };
    s.validate()?;
    Ok(s)
}

/// Serialize one sentence back to its JSON-lines form (no trailing newline).
pub fn sentence_to_jsonl(sentence: &Sentence) -> String {
    let rec = Record {
        tokens: sentence.tokens.iter().map(|t| t.surface.clone()).collect(),
        pos: if sentence.tokens.iter().all(|t| t.pos.is_some()) {
            Some(
                sentence
                    .tokens
                    .iter()
                    .map(|t| t.pos.clone().unwrap())
                    .collect(),
            )
        } else {
            None
        },
        entities: sentence.gold.clone(),
    };
    serde_json::to_string(&rec).expect("sentence serialization cannot fail")
}

pub fn save_nested_jsonl(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&sentence_to_jsonl(s));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
