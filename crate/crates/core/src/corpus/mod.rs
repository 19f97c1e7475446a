//! Corpus types, FinCausal-style ingestion, and the canonical corpus file.

mod fincausal;
mod folds;
mod tagger;
mod tokenize;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fincausal::{
    align_span, parse_fincausal_file, parse_fincausal_str, write_fincausal, IngestReport, ParsedCorpus, SkipReason,
    SkippedRow, MAX_SLACK,
};
pub use folds::{make_folds, FoldSplit};
pub use tagger::{pos_tag, tag_word, PosTag};
pub use tokenize::{char_slice, tokenize, EDGE_PUNCT};

/// Reserved text of the index-0 token.
pub const SENTINEL_TEXT: &str = "[unused0]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character offset, inclusive.
    pub char_start: usize,
    /// Character offset, exclusive.
    pub char_end: usize,
    pub pos_tag: PosTag,
}

impl Token {
    pub fn sentinel() -> Self {
        Token {
            text: SENTINEL_TEXT.to_string(),
            char_start: 0,
            char_end: 0,
            pos_tag: PosTag::Sentinel,
        }
    }
}

/// A tokenized text unit. `tokens[0]` is always the sentinel, so real tokens
/// are addressed by indices `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl Segment {
    /// Builds a segment from tokens that do not include the sentinel.
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut all = Vec::with_capacity(tokens.len() + 1);
        all.push(Token::sentinel());
        all.extend(tokens);
        let seg = Segment {
            id: id.into(),
            raw_text: raw_text.into(),
            tokens: all,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Tokenize and tag `raw_text` with the built-in rules.
    pub fn from_text(id: impl Into<String>, raw_text: impl Into<String>) -> Result<Self> {
        let raw_text = raw_text.into();
        let tokens = pos_tag(tokenize(&raw_text)?);
        Segment::new(id, raw_text, tokens)
    }

    /// Number of real (non-sentinel) tokens.
    pub fn n(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Text covered by the inclusive token range `[start, end]`.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        char_slice(&self.raw_text, self.tokens[start].char_start, self.tokens[end].char_end)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::MalformedRow { line: 0, reason };
        let first = self
            .tokens
            .first()
            .ok_or_else(|| bad(format!("segment {:?} has no tokens", self.id)))?;
        if first.text != SENTINEL_TEXT || first.pos_tag != PosTag::Sentinel {
            return Err(bad(format!("segment {:?} does not start with the sentinel", self.id)));
        }
        if self.n() == 0 {
            return Err(Error::EmptyText);
        }
        let chars: Vec<char> = self.raw_text.chars().collect();
        let mut prev_end = 0;
        for t in &self.tokens[1..] {
            if t.char_start >= t.char_end || t.char_end > chars.len() || t.char_start < prev_end {
                return Err(bad(format!(
                    "segment {:?}: token {:?} has bad offsets ({}, {})",
                    self.id, t.text, t.char_start, t.char_end
                )));
            }
            let slice: String = chars[t.char_start..t.char_end].iter().collect();
            if slice != t.text {
                return Err(bad(format!(
                    "segment {:?}: token {:?} does not match text {:?} at its offsets",
                    self.id, t.text, slice
                )));
            }
            prev_end = t.char_end;
        }
        Ok(())
    }
}

/// A cause/effect pair of inclusive token ranges into a [`Segment`].
///
/// The stop marker `(0, -1, -1, -1)` is never stored as a `Causality`; see
/// [`crate::training::Target`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Causality {
    pub c_s: usize,
    pub c_e: usize,
    pub e_s: usize,
    pub e_e: usize,
}

impl Causality {
    pub fn new(cause: (usize, usize), effect: (usize, usize)) -> Self {
        Causality {
            c_s: cause.0,
            c_e: cause.1,
            e_s: effect.0,
            e_e: effect.1,
        }
    }

    pub fn cause(&self) -> (usize, usize) {
        (self.c_s, self.c_e)
    }

    pub fn effect(&self) -> (usize, usize) {
        (self.e_s, self.e_e)
    }

    /// Both spans lie within `1..=n` and are well ordered.
    pub fn in_bounds(&self, n: usize) -> bool {
        1 <= self.c_s && self.c_s <= self.c_e && self.c_e <= n && 1 <= self.e_s && self.e_s <= self.e_e && self.e_e <= n
    }

    pub fn spans_overlap(&self) -> bool {
        self.c_s <= self.e_e && self.e_s <= self.c_e
    }

    /// Checks the gold-tuple invariants for a segment of length `n`.
    pub fn validate_gold(&self, n: usize) -> Result<()> {
        if !self.in_bounds(n) {
            return Err(Error::InvalidSpan {
                start: self.c_s.min(self.e_s),
                end: self.c_e.max(self.e_e),
                n,
            });
        }
        if self.spans_overlap() {
            return Err(Error::OverlapViolation {
                cause: self.cause(),
                effect: self.effect(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub segment: Segment,
    pub gold: Vec<Causality>,
}

impl Example {
    pub fn id(&self) -> &str {
        &self.segment.id
    }
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    text: String,
    start: usize,
    end: usize,
    pos: PosTag,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    id: String,
    raw_text: String,
    tokens: Vec<TokenRecord>,
    gold: Vec<Causality>,
}

impl From<&Example> for ExampleRecord {
    fn from(ex: &Example) -> Self {
        ExampleRecord {
            id: ex.segment.id.clone(),
            raw_text: ex.segment.raw_text.clone(),
            tokens: ex
                .segment
                .tokens
                .iter()
                .map(|t| TokenRecord {
                    text: t.text.clone(),
                    start: t.char_start,
                    end: t.char_end,
                    pos: t.pos_tag,
                })
                .collect(),
            gold: ex.gold.clone(),
        }
    }
}

impl TryFrom<ExampleRecord> for Example {
    type Error = Error;

    fn try_from(rec: ExampleRecord) -> Result<Self> {
        let segment = Segment {
            id: rec.id,
            raw_text: rec.raw_text,
            tokens: rec
                .tokens
                .into_iter()
                .map(|t| Token {
                    text: t.text,
                    char_start: t.start,
                    char_end: t.end,
                    pos_tag: t.pos,
                })
                .collect(),
        };
        segment.validate()?;
        for g in &rec.gold {
            g.validate_gold(segment.n())?;
        }
        Ok(Example {
            segment,
            gold: rec.gold,
        })
    }
}

/// Serialize examples in the canonical one-record-per-line format.
pub fn write_corpus<W: Write>(mut w: W, examples: &[Example]) -> Result<()> {
    for ex in examples {
        let line = serde_json::to_string(&ExampleRecord::from(ex))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn corpus_to_string(examples: &[Example]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, examples).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(Example::try_from(rec)?);
    }
    Ok(out)
}

pub fn read_corpus_file(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f))
}
