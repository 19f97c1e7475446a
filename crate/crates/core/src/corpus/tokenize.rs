use super::{PosTag, Token};
use crate::error::{Error, Result};

/// Characters split off the front and back of whitespace-delimited chunks.
pub const EDGE_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '%', '$'];

fn is_edge_punct(c: char) -> bool {
    EDGE_PUNCT.contains(&c)
}

/// Whitespace tokenizer that peels leading and trailing punctuation into
/// separate tokens. Offsets are character (not byte) positions in `raw_text`.
/// The returned tokens carry `PosTag::Other`; see [`super::pos_tag`].
pub fn tokenize(raw_text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = raw_text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut tokens);
    }
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(tokens)
}

fn split_chunk(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Token>) {
    let mut trailing = Vec::new();
    while start < end && is_edge_punct(chars[start]) {
        out.push(make_token(chars, start, start + 1));
        start += 1;
    }
    while end > start && is_edge_punct(chars[end - 1]) {
        trailing.push(make_token(chars, end - 1, end));
        end -= 1;
    }
    if start < end {
        out.push(make_token(chars, start, end));
    }
    out.extend(trailing.into_iter().rev());
}

fn make_token(chars: &[char], start: usize, end: usize) -> Token {
    Token {
        text: chars[start..end].iter().collect(),
        char_start: start,
        char_end: end,
        pos_tag: PosTag::Other,
    }
}

/// Substring of `text` between character offsets `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}
