//! Reader and writer for semicolon-delimited FinCausal-style files.
//!
//! Required columns: `Index; Text; Cause; Effect`. Optional columns:
//! `Cause_Start; Cause_End; Effect_Start; Effect_End` (character offsets into
//! `Text`, end exclusive) and `POS` (space-separated tags, one per token).
//! Rows whose `Index` values share everything before the final `.suffix`
//! and carry the same `Text` are causalities of one segment.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use csv::{ReaderBuilder, Trim, WriterBuilder};
use log::warn;

use super::tagger::pos_tag;
use super::tokenize::tokenize;
use super::{Causality, Example, PosTag, Segment};
use crate::error::{Error, Result};

/// Characters of slack allowed when a span boundary falls inside a token.
pub const MAX_SLACK: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    Alignment(String),
    Overlap {
        cause: (usize, usize),
        effect: (usize, usize),
    },
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based line in the input file.
    pub line: usize,
    pub index: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows: usize,
    pub segments: usize,
    pub tuples: usize,
    pub skipped: Vec<SkippedRow>,
    /// Segments dropped because every one of their rows was skipped.
    pub dropped_segments: usize,
    /// Rows whose POS column did not match the token count.
    pub pos_fallbacks: usize,
}

impl IngestReport {
    pub fn alignment_failures(&self) -> usize {
        self.skipped
            .iter()
            .filter(|s| matches!(s.reason, SkipReason::Alignment(_)))
            .count()
    }

    pub fn overlap_violations(&self) -> usize {
        self.skipped
            .iter()
            .filter(|s| matches!(s.reason, SkipReason::Overlap { .. }))
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub examples: Vec<Example>,
    pub report: IngestReport,
}

struct RawRow {
    line: usize,
    index: String,
    text: String,
    cause: String,
    effect: String,
    cause_hint: Option<(usize, usize)>,
    effect_hint: Option<(usize, usize)>,
    pos: Option<String>,
}

struct Columns {
    index: usize,
    text: usize,
    cause: usize,
    effect: usize,
    cause_start: Option<usize>,
    cause_end: Option<usize>,
    effect_start: Option<usize>,
    effect_end: Option<usize>,
    pos: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
        };
        let required = |name: &str| {
            find(name).ok_or_else(|| Error::MalformedRow {
                line: 1,
                reason: format!("header lacks required column {name:?}"),
            })
        };
        Ok(Columns {
            index: required("Index")?,
            text: required("Text")?,
            cause: required("Cause")?,
            effect: required("Effect")?,
            cause_start: find("Cause_Start"),
            cause_end: find("Cause_End"),
            effect_start: find("Effect_Start"),
            effect_end: find("Effect_End"),
            pos: find("POS"),
        })
    }
}

fn parse_offset(rec: &csv::StringRecord, col: Option<usize>, line: usize) -> Result<Option<usize>> {
    let Some(col) = col else { return Ok(None) };
    let raw = rec.get(col).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| Error::MalformedRow {
        line,
        reason: format!("offset {raw:?} is not a non-negative integer"),
    })
}

fn hint(start: Option<usize>, end: Option<usize>) -> Option<(usize, usize)> {
    Some((start?, end?))
}

/// Index with its final `.suffix` removed (unchanged when there is no dot).
fn index_prefix(index: &str) -> &str {
    index.rsplit_once('.').map_or(index, |(p, _)| p)
}

pub fn parse_fincausal_file(path: impl AsRef<Path>) -> Result<ParsedCorpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fincausal_str(&content)
}

pub fn parse_fincausal_str(content: &str) -> Result<ParsedCorpus> {
    let mut reader = ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(content.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "missing header".into(),
        });
    }
    let cols = Columns::from_header(&header)?;

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let get = |c: usize| rec.get(c).unwrap_or("").to_string();
        rows.push(RawRow {
            line,
            index: get(cols.index),
            text: get(cols.text),
            cause: get(cols.cause),
            effect: get(cols.effect),
            cause_hint: hint(
                parse_offset(&rec, cols.cause_start, line)?,
                parse_offset(&rec, cols.cause_end, line)?,
            ),
            effect_hint: hint(
                parse_offset(&rec, cols.effect_start, line)?,
                parse_offset(&rec, cols.effect_end, line)?,
            ),
            pos: cols.pos.map(get).filter(|p| !p.is_empty()),
        });
    }
    Ok(build_examples(rows))
}

fn build_examples(rows: Vec<RawRow>) -> ParsedCorpus {
    let mut report = IngestReport {
        rows: rows.len(),
        ..Default::default()
    };

    // Group by (index prefix, text), keeping first-appearance order.
    let mut group_of: HashMap<(&str, &str), usize> = HashMap::new();
    let mut groups: Vec<Vec<&RawRow>> = Vec::new();
    let mut texts_per_prefix: HashMap<&str, usize> = HashMap::new();
    for row in &rows {
        let key = (index_prefix(&row.index), row.text.as_str());
        let gi = *group_of.entry(key).or_insert_with(|| {
            *texts_per_prefix.entry(key.0).or_default() += 1;
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[gi].push(row);
    }

    let mut examples = Vec::new();
    for group in groups {
        let first = group[0];
        let prefix = index_prefix(&first.index);
        let id = if texts_per_prefix[prefix] == 1 {
            prefix.to_string()
        } else {
            first.index.clone()
        };

        let tokens = match tokenize(&first.text) {
            Ok(t) => t,
            Err(_) => {
                for row in &group {
                    report.skipped.push(SkippedRow {
                        line: row.line,
                        index: row.index.clone(),
                        reason: SkipReason::EmptyText,
                    });
                }
                report.dropped_segments += 1;
                continue;
            }
        };
        let tokens = match group.iter().find_map(|r| r.pos.as_deref()) {
            Some(tags) => match file_tags(tags, tokens.len()) {
                Some(tags) => tokens
                    .into_iter()
                    .zip(tags)
                    .map(|(mut t, tag)| {
                        t.pos_tag = tag;
                        t
                    })
                    .collect(),
                None => {
                    report.pos_fallbacks += 1;
                    warn!("segment {id}: POS column unusable, using built-in tagger");
                    pos_tag(tokens)
                }
            },
            None => pos_tag(tokens),
        };
        let segment =
            Segment::new(id, first.text.clone(), tokens).expect("tokenizer output always forms a valid segment");

        let mut gold: Vec<Causality> = Vec::new();
        let mut kept_rows = 0;
        for row in &group {
            match row_causality(&segment, row) {
                Ok(Some(c)) => {
                    kept_rows += 1;
                    if !gold.contains(&c) {
                        gold.push(c);
                    }
                }
                Ok(None) => kept_rows += 1,
                Err(reason) => {
                    warn!("line {}: skipping row {}: {:?}", row.line, row.index, reason);
                    report.skipped.push(SkippedRow {
                        line: row.line,
                        index: row.index.clone(),
                        reason,
                    });
                }
            }
        }
        if kept_rows == 0 {
            report.dropped_segments += 1;
            continue;
        }
        report.tuples += gold.len();
        examples.push(Example { segment, gold });
    }
    report.segments = examples.len();
    ParsedCorpus { examples, report }
}

fn file_tags(tags: &str, expected: usize) -> Option<Vec<PosTag>> {
    let parsed: Vec<PosTag> = tags.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (parsed.len() == expected && !parsed.contains(&PosTag::Sentinel)).then_some(parsed)
}

/// `Ok(None)` means the row marks a segment without causality.
fn row_causality(segment: &Segment, row: &RawRow) -> std::result::Result<Option<Causality>, SkipReason> {
    let no_cause = row.cause.is_empty() && row.cause_hint.is_none();
    let no_effect = row.effect.is_empty() && row.effect_hint.is_none();
    if no_cause && no_effect {
        return Ok(None);
    }
    let align = |text: &str, hint| align_span(segment, text, hint).map_err(|e| SkipReason::Alignment(e.to_string()));
    let cause = align(&row.cause, row.cause_hint)?;
    let effect = align(&row.effect, row.effect_hint)?;
    let c = Causality::new(cause, effect);
    if c.spans_overlap() {
        return Err(SkipReason::Overlap { cause, effect });
    }
    Ok(Some(c))
}

/// Map a character span onto the smallest covering inclusive token range.
///
/// With `char_hint` the given `[start, end)` character range is used;
/// otherwise the leftmost occurrence of `span_text` in the raw text.
pub fn align_span(segment: &Segment, span_text: &str, char_hint: Option<(usize, usize)>) -> Result<(usize, usize)> {
    let fail = |reason: String| Error::AlignmentFailure {
        span: span_text.to_string(),
        reason,
    };
    let chars: Vec<char> = segment.raw_text.chars().collect();
    let (mut start, mut end) = match char_hint {
        Some((s, e)) => {
            if s >= e || e > chars.len() {
                return Err(fail(format!(
                    "offsets ({s}, {e}) invalid for text of {} characters",
                    chars.len()
                )));
            }
            (s, e)
        }
        None => {
            let needle = span_text.trim();
            if needle.is_empty() {
                return Err(fail("empty span".into()));
            }
            let byte = segment
                .raw_text
                .find(needle)
                .ok_or_else(|| fail("not found in text".into()))?;
            let s = segment.raw_text[..byte].chars().count();
            (s, s + needle.chars().count())
        }
    };
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start == end {
        return Err(fail("span is blank".into()));
    }

    let toks = &segment.tokens[1..];
    let ts = toks.iter().position(|t| t.char_end > start).map(|i| i + 1);
    let te = toks.iter().rposition(|t| t.char_start < end).map(|i| i + 1);
    let (ts, te) = match (ts, te) {
        (Some(a), Some(b)) if a <= b => (a, b),
        _ => return Err(fail("no token inside span".into())),
    };
    let left = start.saturating_sub(segment.tokens[ts].char_start);
    let right = segment.tokens[te].char_end.saturating_sub(end);
    if left > MAX_SLACK || right > MAX_SLACK {
        return Err(fail(format!(
            "boundary inside a token (slack {left} left, {right} right)"
        )));
    }
    Ok((ts, te))
}

/// Write examples back out in FinCausal layout with offset columns.
pub fn write_fincausal<W: Write>(w: W, examples: &[Example]) -> Result<()> {
    let mut wr = WriterBuilder::new().delimiter(b';').from_writer(w);
    wr.write_record([
        "Index",
        "Text",
        "Cause",
        "Effect",
        "Cause_Start",
        "Cause_End",
        "Effect_Start",
        "Effect_End",
    ])?;
    for ex in examples {
        let seg = &ex.segment;
        if ex.gold.is_empty() {
            let index = format!("{}.1", seg.id);
            wr.write_record([index.as_str(), seg.raw_text.as_str(), "", "", "", "", "", ""])?;
        }
        for (k, g) in ex.gold.iter().enumerate() {
            let off = |a: usize, b: usize| (seg.tokens[a].char_start, seg.tokens[b].char_end);
            let (cs, ce) = off(g.c_s, g.c_e);
            let (es, ee) = off(g.e_s, g.e_e);
            wr.write_record([
                format!("{}.{}", seg.id, k + 1),
                seg.raw_text.clone(),
                seg.span_text(g.c_s, g.c_e),
                seg.span_text(g.e_s, g.e_e),
                cs.to_string(),
                ce.to_string(),
                es.to_string(),
                ee.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<fincausal>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(text: &str) -> Segment {
        Segment::from_text("s", text).unwrap()
    }

    #[test]
    fn exact_cover() {
        let s = seg("Net income fell sharply in the quarter .");
        // tokens: 1 Net 2 income 3 fell 4 sharply 5 in 6 the 7 quarter 8 .
        assert_eq!(align_span(&s, "fell sharply in", None).unwrap(), (3, 5));
    }

    #[test]
    fn sub_token_punctuation() {
        let s = seg("Sales (2019) rose");
        assert_eq!(align_span(&s, "2019", None).unwrap(), (3, 3));
    }

    #[test]
    fn hint_selects_second_occurrence() {
        let text = "costs rose and costs rose again";
        let s = seg(text);
        assert_eq!(align_span(&s, "costs rose", None).unwrap(), (1, 2));
        let second = text.rfind("costs rose").unwrap();
        assert_eq!(
            align_span(&s, "costs rose", Some((second, second + 10))).unwrap(),
            (4, 5)
        );
    }

    #[test]
    fn small_slack_is_tolerated_large_is_not() {
        let s = seg("Profits collapsed");
        assert_eq!(align_span(&s, "rofits", None).unwrap(), (1, 1));
        assert!(matches!(align_span(&s, "ofits", Some((2, 7))), Ok((1, 1))));
        assert!(matches!(
            align_span(&s, "fits", None),
            Err(Error::AlignmentFailure { .. })
        ));
        assert!(matches!(
            align_span(&s, "missing", None),
            Err(Error::AlignmentFailure { .. })
        ));
    }

    #[test]
    fn grouping_by_index_prefix() {
        let data = "Index; Text; Cause; Effect\n\
                    0007.1; Rates rose. Stocks fell. Bonds fell.; Rates rose; Stocks fell\n\
                    0007.2; Rates rose. Stocks fell. Bonds fell.; Rates rose; Bonds fell\n";
        let parsed = parse_fincausal_str(data).unwrap();
        assert_eq!(parsed.examples.len(), 1);
        let ex = &parsed.examples[0];
        assert_eq!(ex.id(), "0007");
        assert_eq!(
            ex.gold,
            vec![Causality::new((1, 2), (4, 5)), Causality::new((1, 2), (7, 8))]
        );
        assert!(parsed.report.skipped.is_empty());
    }

    #[test]
    fn prefix_and_suffix_row() {
        let data = "Index; Text; Cause; Effect\n\
                    1.1; Demand slumped so output was cut.; Demand slumped; output was cut.\n";
        let parsed = parse_fincausal_str(data).unwrap();
        let ex = &parsed.examples[0];
        let g = ex.gold[0];
        assert_eq!(g, Causality::new((1, 2), (4, 7)));
        assert_eq!(ex.segment.span_text(g.c_s, g.c_e), "Demand slumped");
        assert_eq!(ex.segment.span_text(g.e_s, g.e_e), "output was cut.");
    }

    #[test]
    fn distinct_texts_under_one_prefix_keep_full_ids() {
        let data = "Index; Text; Cause; Effect\n\
                    0001.00010; Oil fell so airlines rallied.; Oil fell; airlines rallied\n\
                    0001.00011; Rain came so crops grew.; Rain came; crops grew\n";
        let parsed = parse_fincausal_str(data).unwrap();
        let ids: Vec<_> = parsed.examples.iter().map(|e| e.id().to_string()).collect();
        assert_eq!(ids, ["0001.00010", "0001.00011"]);
    }

    #[test]
    fn column_count_mismatch_is_fatal() {
        let data = "Index; Text; Cause; Effect\n1.1; Oil fell; Oil\n";
        assert!(matches!(
            parse_fincausal_str(data),
            Err(Error::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn overlapping_cause_and_effect_is_skipped() {
        let data = "Index; Text; Cause; Effect\n\
                    1.1; Oil prices fell sharply; Oil prices fell; prices fell sharply\n\
                    1.2; Oil prices fell sharply; Oil prices; fell sharply\n";
        let parsed = parse_fincausal_str(data).unwrap();
        assert_eq!(parsed.report.overlap_violations(), 1);
        assert_eq!(parsed.examples[0].gold.len(), 1);
    }

    #[test]
    fn row_without_causality_gives_empty_gold() {
        let data = "Index; Text; Cause; Effect\n3.1; Markets were calm.; ;\n";
        let parsed = parse_fincausal_str(data).unwrap();
        assert_eq!(parsed.examples.len(), 1);
        assert!(parsed.examples[0].gold.is_empty());
    }

    #[test]
    fn pos_column_overrides_tagger() {
        let data = "Index; Text; Cause; Effect; POS\n\
                    4.1; Oil fell; ; ; NOUN VERB\n\
                    5.1; Oil fell; ; ; NOUN\n";
        let parsed = parse_fincausal_str(data).unwrap();
        assert_eq!(parsed.report.pos_fallbacks, 1);
        assert_eq!(parsed.examples[0].segment.tokens[2].pos_tag, PosTag::Verb);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse_fincausal_str("").is_err());
    }

    #[test]
    fn fincausal_writer_round_trips() {
        let data = "Index; Text; Cause; Effect\n\
                    0007.1; Rates rose. Stocks fell. Bonds fell.; Rates rose; Stocks fell\n\
                    0007.2; Rates rose. Stocks fell. Bonds fell.; Rates rose; Bonds fell\n\
                    0008.1; Nothing happened today.; ;\n";
        let first = parse_fincausal_str(data).unwrap().examples;
        let mut buf = Vec::new();
        write_fincausal(&mut buf, &first).unwrap();
        let second = parse_fincausal_str(std::str::from_utf8(&buf).unwrap())
            .unwrap()
            .examples;
        assert_eq!(first, second);
    }
}
