//! Rule-based part-of-speech tagger over a 12-tag universal-style tagset.
//!
//! Rules are applied in order: punctuation, numerals, closed-class lexicons,
//! a small open-class verb lexicon, then suffix heuristics. Alphabetic words
//! that match nothing are nouns; anything else falls back to `OTHER`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    Other,
    /// Reserved for the index-0 sentinel token.
    Sentinel,
}

impl PosTag {
    /// Number of tags including the sentinel tag.
    pub const COUNT: usize = 13;

    pub const ALL: [PosTag; PosTag::COUNT] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Num,
        PosTag::Conj,
        PosTag::Prt,
        PosTag::Punct,
        PosTag::Other,
        PosTag::Sentinel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Pron => "PRON",
            PosTag::Det => "DET",
            PosTag::Adp => "ADP",
            PosTag::Num => "NUM",
            PosTag::Conj => "CONJ",
            PosTag::Prt => "PRT",
            PosTag::Punct => "PUNCT",
            PosTag::Other => "OTHER",
            PosTag::Sentinel => "SENTINEL",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PosTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown POS tag {s:?}"))
    }
}

const DET: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "each", "every", "some", "any", "no", "all", "both", "either",
    "neither", "another", "such",
];
const PRON: &[&str] = &[
    "i",
    "me",
    "my",
    "we",
    "us",
    "our",
    "you",
    "your",
    "he",
    "him",
    "his",
    "she",
    "her",
    "it",
    "its",
    "they",
    "them",
    "their",
    "who",
    "whom",
    "whose",
    "which",
    "what",
    "itself",
    "themselves",
];
const ADP: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "from", "into", "onto", "over", "under", "after", "before", "during",
    "despite", "amid", "amidst", "since", "against", "through", "between", "among", "about", "above", "below",
    "across", "toward", "towards", "via", "within", "without", "per", "until", "upon", "versus",
];
const CONJ: &[&str] = &[
    "and", "or", "but", "nor", "yet", "because", "although", "though", "while", "whereas", "if", "unless", "as", "so",
    "than", "whether",
];
const PRT: &[&str] = &["to", "not", "n't", "'s", "up", "off", "out"];
const ADV: &[&str] = &[
    "very",
    "also",
    "still",
    "already",
    "just",
    "even",
    "only",
    "too",
    "again",
    "now",
    "then",
    "soon",
    "almost",
    "thus",
    "therefore",
    "however",
    "here",
    "there",
    "often",
    "more",
    "most",
    "less",
    "least",
];
const VERB: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "will",
    "would", "can", "could", "may", "might", "shall", "should", "must", "rose", "rise", "rises", "risen", "fell",
    "fall", "falls", "fallen", "grew", "grow", "grows", "grown", "cut", "cuts", "led", "lead", "leads", "drove",
    "drive", "drives", "driven", "made", "make", "makes", "saw", "see", "sees", "said", "say", "says", "took", "take",
    "takes", "got", "get", "gets", "gave", "give", "gives", "hit", "hits", "sank", "sink", "sinks", "soared", "soar",
    "soars", "jumped", "jump", "jumps", "caused", "cause", "causes", "boost", "boosts", "hurt", "hurts", "lost",
    "lose", "loses", "won", "win", "wins", "paid", "pay", "pays", "sold", "sell", "sells", "bought", "buy", "buys",
    "spent", "spend", "spends", "became", "become", "becomes", "remain", "remains", "expect", "expects", "reported",
    "report", "reports",
];
const NUM_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "twenty", "thirty", "forty", "fifty", "hundred", "thousand", "million", "billion", "trillion", "dozen",
];
const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ary", "ish"];

fn is_numeral(word: &str) -> bool {
    let body = word.strip_prefix(['+', '-']).unwrap_or(word);
    let mut chars = body.chars();
    match chars.next() {
        Some(c) if c.is_ascii_digit() => {}
        _ => return false,
    }
    body.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
}

/// Tag a single word in isolation.
pub fn tag_word(word: &str) -> PosTag {
    if word.is_empty() {
        return PosTag::Other;
    }
    if word.chars().all(|c| !c.is_alphanumeric()) {
        return PosTag::Punct;
    }
    if is_numeral(word) {
        return PosTag::Num;
    }
    let lower = word.to_lowercase();
    let w = lower.as_str();
    if NUM_WORDS.contains(&w) {
        return PosTag::Num;
    }
    if DET.contains(&w) {
        return PosTag::Det;
    }
    if PRON.contains(&w) {
        return PosTag::Pron;
    }
    if ADP.contains(&w) {
        return PosTag::Adp;
    }
    if CONJ.contains(&w) {
        return PosTag::Conj;
    }
    if PRT.contains(&w) {
        return PosTag::Prt;
    }
    if ADV.contains(&w) {
        return PosTag::Adv;
    }
    if VERB.contains(&w) {
        return PosTag::Verb;
    }
    if !w.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\'') {
        return PosTag::Other;
    }
    let len = w.chars().count();
    if len > 3 && w.ends_with("ly") {
        return PosTag::Adv;
    }
    if len > 4 && (w.ends_with("ed") || w.ends_with("ing")) {
        return PosTag::Verb;
    }
    if len > 4 && ADJ_SUFFIXES.iter().any(|s| w.ends_with(s)) {
        return PosTag::Adj;
    }
    PosTag::Noun
}

/// Fill in `pos_tag` for each token with the built-in rules.
pub fn pos_tag(tokens: Vec<Token>) -> Vec<Token> {
    tokens
        .into_iter()
        .map(|mut t| {
            t.pos_tag = tag_word(&t.text);
            t
        })
        .collect()
}
