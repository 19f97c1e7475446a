//! Token vocabulary, per-token hidden states, and the precomputed-vector
//! boundary for externally produced contextual encodings.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{Example, Segment};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{hex, ModelParams};
use crate::nn::BiLstmCache;

pub const SENTINEL_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_ID: usize = 2;
const RESERVED: [&str; 3] = ["<sentinel>", "<unk>", "<pad>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids for every token of the segment, the sentinel included.
    pub fn encode(&self, segment: &Segment) -> Vec<usize> {
        std::iter::once(SENTINEL_ID)
            .chain(segment.tokens[1..].iter().map(|t| self.id(&t.text)))
            .collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }

    /// One token per line in id order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Checkpoint("vocabulary lacks the reserved entries".into()));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Vocabulary::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Tokens seen at least `min_count` times get ids, most frequent first with
/// ties broken lexicographically. Ids 0..3 are reserved.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a Example>, min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in corpus {
        for t in &ex.segment.tokens[1..] {
            *counts.entry(t.text.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Per-token hidden states. Rows `0..valid_len` are real (row 0 is the
/// sentinel); any rows beyond are padding and are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub states: Mat,
    pub valid_len: usize,
}

impl EncoderStates {
    pub fn new(states: Mat) -> Self {
        let valid_len = states.rows();
        EncoderStates { states, valid_len }
    }

    /// Number of real tokens, excluding the sentinel.
    pub fn n(&self) -> usize {
        self.valid_len - 1
    }

    pub fn width(&self) -> usize {
        self.states.cols()
    }

    pub fn rows(&self) -> usize {
        self.states.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.rows()).map(|i| i < self.valid_len).collect()
    }

    /// Copy padded with zero rows up to `len` rows.
    pub fn padded_to(&self, len: usize) -> Self {
        assert!(len >= self.rows());
        let mut m = Mat::zeros(len, self.width());
        for i in 0..self.rows() {
            m.row_mut(i).copy_from_slice(self.row(i));
        }
        EncoderStates {
            states: m,
            valid_len: self.valid_len,
        }
    }
}

/// Source of the contextual part of the encoder states.
#[derive(Debug, Clone, Copy)]
pub enum ContextInput<'a> {
    /// Vocabulary ids (sentinel first); embedded and optionally run through
    /// the recurrent layer.
    Tokens(&'a [usize]),
    /// Externally produced vectors, one row per token including the sentinel.
    /// These are adopted verbatim and receive no gradient.
    Precomputed(&'a Mat),
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    ids: Option<Vec<usize>>,
    tags: Vec<usize>,
    rnn: Option<BiLstmCache>,
}

/// Forward pass producing `padded_len x d_h` states for `valid_len = tags.len()`
/// tokens.
pub fn encode_forward(
    params: &ModelParams,
    input: ContextInput<'_>,
    tags: &[usize],
    padded_len: usize,
) -> Result<(EncoderStates, EncoderCache)> {
    let cfg = params.config.encoder;
    let len = tags.len();
    if len < 2 {
        return Err(Error::DimensionMismatch(
            "a segment needs the sentinel and at least one token".into(),
        ));
    }
    if padded_len < len {
        return Err(Error::DimensionMismatch(format!(
            "padded length {padded_len} shorter than segment length {len}"
        )));
    }
    if params.tok_emb.cols() != cfg.context_dim || params.pos_emb.cols() != cfg.pos_dim {
        return Err(Error::DimensionMismatch(
            "embedding tables disagree with the encoder config".into(),
        ));
    }
    if let Some(&t) = tags.iter().find(|&&t| t >= params.pos_emb.rows()) {
        return Err(Error::DimensionMismatch(format!("POS tag id {t} out of range")));
    }

    let mut states = Mat::zeros(padded_len, cfg.d_h());
    let (ids, rnn_cache) = match input {
        ContextInput::Precomputed(m) => {
            if m.cols() != cfg.context_dim {
                return Err(Error::DimensionMismatch(format!(
                    "precomputed width {} != context_dim {}",
                    m.cols(),
                    cfg.context_dim
                )));
            }
            if m.rows() != len {
                return Err(Error::DimensionMismatch(format!(
                    "precomputed rows {} != segment length {len}",
                    m.rows()
                )));
            }
            for i in 0..len {
                states.row_mut(i)[..cfg.context_dim].copy_from_slice(m.row(i));
            }
            (None, None)
        }
        ContextInput::Tokens(ids) => {
            if ids.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "{} token ids for {len} tags",
                    ids.len()
                )));
            }
            if let Some(&bad) = ids.iter().find(|&&id| id >= params.tok_emb.rows()) {
                return Err(Error::DimensionMismatch(format!(
                    "token id {bad} outside vocabulary of {}",
                    params.tok_emb.rows()
                )));
            }
            let emb: Vec<&[f64]> = ids.iter().map(|&id| params.tok_emb.row(id)).collect();
            let cache = match (&params.enc_rnn, cfg.recurrent) {
                (Some(rnn), true) => {
                    let (zf, zb) = rnn.project(&emb);
                    let (out, cache) = rnn.forward(&zf, &zb);
                    for (i, o) in out.iter().enumerate() {
                        states.row_mut(i)[..cfg.context_dim].copy_from_slice(o);
                    }
                    Some(cache)
                }
                (None, false) => {
                    for (i, e) in emb.iter().enumerate() {
                        states.row_mut(i)[..cfg.context_dim].copy_from_slice(e);
                    }
                    None
                }
                _ => {
                    return Err(Error::DimensionMismatch(
                        "recurrent flag disagrees with encoder parameters".into(),
                    ))
                }
            };
            (Some(ids.to_vec()), cache)
        }
    };
    for (i, &tag) in tags.iter().enumerate() {
        states.row_mut(i)[cfg.context_dim..].copy_from_slice(params.pos_emb.row(tag));
    }
    let cache = EncoderCache {
        ids,
        tags: tags.to_vec(),
        rnn: rnn_cache,
    };
    Ok((EncoderStates { states, valid_len: len }, cache))
}

/// Accumulates gradients of the encoder parameters given `d_states`.
pub fn encode_backward(params: &ModelParams, cache: &EncoderCache, d_states: &Mat, grads: &mut ModelParams) {
    let c = params.config.encoder.context_dim;
    let len = cache.tags.len();
    for (i, &tag) in cache.tags.iter().enumerate() {
        crate::linalg::add_assign(grads.pos_emb.row_mut(tag), &d_states.row(i)[c..]);
    }
    let Some(ids) = &cache.ids else {
        return;
    };
    let d_ctx: Vec<Vec<f64>> = (0..len).map(|i| d_states.row(i)[..c].to_vec()).collect();
    match (&params.enc_rnn, &cache.rnn) {
        (Some(rnn), Some(rc)) => {
            let g = grads.enc_rnn.as_mut().expect("gradient shapes mirror params");
            let (dzf, dzb) = rnn.backward(rc, &d_ctx, g);
            for (i, &id) in ids.iter().enumerate() {
                let x = params.tok_emb.row(id);
                g.fwd.wx.add_outer(&dzf[i], x);
                g.bwd.wx.add_outer(&dzb[i], x);
                let row = grads.tok_emb.row_mut(id);
                rnn.fwd.wx.tmatvec_acc(&dzf[i], row);
                rnn.bwd.wx.tmatvec_acc(&dzb[i], row);
            }
        }
        _ => {
            for (i, &id) in ids.iter().enumerate() {
                crate::linalg::add_assign(grads.tok_emb.row_mut(id), &d_ctx[i]);
            }
        }
    }
}

/// Hidden states for one segment, unpadded.
pub fn encode(params: &ModelParams, input: ContextInput<'_>, tags: &[usize]) -> Result<EncoderStates> {
    encode_forward(params, input, tags, tags.len()).map(|(s, _)| s)
}

/// POS tag ids of a segment, sentinel included.
pub fn tag_ids(segment: &Segment) -> Vec<usize> {
    segment.tokens.iter().map(|t| t.pos_tag.index()).collect()
}

/// Contextual vectors keyed by segment id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedVectors {
    vectors: HashMap<String, Mat>,
}

impl PrecomputedVectors {
    pub fn insert(&mut self, id: impl Into<String>, rows: Mat) {
        self.vectors.insert(id.into(), rows);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vectors for `segment`, checked against its length and `context_dim`.
    pub fn for_segment(&self, segment: &Segment, context_dim: usize) -> Result<&Mat> {
        let m = self
            .vectors
            .get(&segment.id)
            .ok_or_else(|| Error::MissingSegment(segment.id.clone()))?;
        if m.cols() != context_dim {
            return Err(Error::WidthMismatch {
                id: segment.id.clone(),
                expected: context_dim,
                got: m.cols(),
            });
        }
        if m.rows() != segment.tokens.len() {
            return Err(Error::RowCountMismatch {
                id: segment.id.clone(),
                expected: segment.tokens.len(),
                got: m.rows(),
            });
        }
        Ok(m)
    }

    /// Text format: a line `@<segment id>` followed by one line of
    /// whitespace-separated decimals per token (sentinel first). Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = PrecomputedVectors::default();
        let mut current: Option<(String, Vec<Vec<f64>>)> = None;
        let finish = |cur: Option<(String, Vec<Vec<f64>>)>, out: &mut PrecomputedVectors, line: usize| -> Result<()> {
            if let Some((id, rows)) = cur {
                let width = rows.first().map_or(0, Vec::len);
                if let Some(r) = rows.iter().find(|r| r.len() != width) {
                    return Err(Error::WidthMismatch {
                        id,
                        expected: width,
                        got: r.len(),
                    });
                }
                if rows.is_empty() {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("segment {id:?} has no vectors"),
                    });
                }
                out.insert(id, Mat::from_rows(&rows));
            }
            Ok(())
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(id) = line.strip_prefix('@') {
                finish(current.take(), &mut out, i + 1)?;
                current = Some((id.trim().to_string(), Vec::new()));
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::MalformedRow {
                        line: i + 1,
                        reason: format!("{v:?} is not a number"),
                    })
                })
                .collect::<Result<_>>()?;
            match current.as_mut() {
                Some((_, rows)) => rows.push(row),
                None => {
                    return Err(Error::MalformedRow {
                        line: i + 1,
                        reason: "vector line before any @id line".into(),
                    })
                }
            }
        }
        finish(current.take(), &mut out, text.lines().count())?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        for id in ids {
            let m = &self.vectors[id];
            writeln!(w, "@{id}").map_err(|e| Error::io("<vectors>", e))?;
            for r in 0..m.rows() {
                let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io("<vectors>", e))?;
            }
        }
        Ok(())
    }
}

pub fn load_precomputed(path: impl AsRef<Path>) -> Result<PrecomputedVectors> {
    let path = path.as_ref();
    PrecomputedVectors::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Segment;
    use crate::model::{EncoderConfig, ModelConfig, Ordering};

    fn ex(text: &str) -> Example {
        Example {
            segment: Segment::from_text(text, text).unwrap(),
            gold: vec![],
        }
    }

    fn config(context_dim: usize, pos_dim: usize, vocab_size: usize, recurrent: bool) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                context_dim,
                pos_dim,
                vocab_size,
                recurrent,
            },
            ordering: Ordering::CauseFirst,
        }
    }

    #[test]
    fn vocab_single_token() {
        let v = build_vocab(&[ex("a a a")], 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn vocab_min_count_filters_everything() {
        let v = build_vocab(&[ex("a b c d")], 5);
        assert_eq!(v.len(), 3);
        assert!(["a", "b", "c", "d"].iter().all(|t| v.id(t) == UNK_ID));
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let v = build_vocab(&[ex("pear apple fig apple pear")], 1);
        assert_eq!(v.token(3), Some("apple"));
        assert_eq!(v.token(4), Some("pear"));
        assert_eq!(v.token(5), Some("fig"));
        let again = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(again, v);
        assert_eq!(again.hash(), v.hash());
    }

    #[test]
    fn shape_for_single_token_segment() {
        let p = ModelParams::init(config(4, 2, 5, true), 1).unwrap();
        let s = encode(&p, ContextInput::Tokens(&[0, 3]), &[12, 0]).unwrap();
        assert_eq!(s.states.shape(), (2, 6));
    }

    #[test]
    fn zero_pos_embeddings_give_zero_columns() {
        let mut p = ModelParams::init(config(3, 3, 5, false), 1).unwrap();
        p.pos_emb = Mat::zeros(p.pos_emb.rows(), 3);
        let s = encode(&p, ContextInput::Tokens(&[0, 3, 4]), &[12, 0, 1]).unwrap();
        for i in 0..3 {
            assert_eq!(&s.row(i)[3..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn identity_embeddings_pass_through() {
        let mut p = ModelParams::zeros(config(4, 2, 4, false)).unwrap();
        p.tok_emb = Mat::identity(4);
        let s = encode(&p, ContextInput::Tokens(&[0, 3, 1, 2]), &[12, 0, 0, 0]).unwrap();
        let expected = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(&s.row(i)[..4], row);
        }
    }

    #[test]
    fn precomputed_vectors_are_adopted_verbatim() {
        let seg = Segment::from_text("seg-1", "Oil fell").unwrap();
        let text = "@seg-1\n0.5 -1.25\n3 0.125\n1e-3 7\n";
        let vecs = PrecomputedVectors::parse(text).unwrap();
        let m = vecs.for_segment(&seg, 2).unwrap();
        let p = ModelParams::init(config(2, 2, 3, false), 1).unwrap();
        let s = encode(&p, ContextInput::Precomputed(m), &tag_ids(&seg)).unwrap();
        assert_eq!(&s.row(0)[..2], &[0.5, -1.25]);
        assert_eq!(&s.row(1)[..2], &[3.0, 0.125]);
        assert_eq!(&s.row(2)[..2], &[1e-3, 7.0]);

        let mut buf = Vec::new();
        vecs.write(&mut buf).unwrap();
        assert_eq!(
            PrecomputedVectors::parse(std::str::from_utf8(&buf).unwrap()).unwrap(),
            vecs
        );
    }

    #[test]
    fn precomputed_contract_errors() {
        let seg = Segment::from_text("s", "Oil fell").unwrap();
        let missing_sentinel = PrecomputedVectors::parse("@s\n1 2\n3 4\n").unwrap();
        assert!(matches!(
            missing_sentinel.for_segment(&seg, 2),
            Err(Error::RowCountMismatch {
                expected: 3,
                got: 2,
                ..
            })
        ));
        let wide = PrecomputedVectors::parse("@s\n1 2 3\n1 2 3\n1 2 3\n").unwrap();
        assert!(matches!(
            wide.for_segment(&seg, 2),
            Err(Error::WidthMismatch {
                expected: 2,
                got: 3,
                ..
            })
        ));
        assert!(matches!(
            PrecomputedVectors::default().for_segment(&seg, 2),
            Err(Error::MissingSegment(_))
        ));
        assert!(PrecomputedVectors::parse("1 2\n").is_err());
    }

    #[test]
    fn config_mismatch_is_reported() {
        let p = ModelParams::init(config(4, 2, 5, true), 1).unwrap();
        let wrong = Mat::zeros(2, 3);
        assert!(matches!(
            encode(&p, ContextInput::Precomputed(&wrong), &[12, 0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn padding_adds_zero_rows() {
        let p = ModelParams::init(config(4, 2, 5, true), 1).unwrap();
        let (s, _) = encode_forward(&p, ContextInput::Tokens(&[0, 3, 4]), &[12, 0, 1], 5).unwrap();
        assert_eq!(s.rows(), 5);
        assert_eq!(s.valid_len, 3);
        assert_eq!(s.mask(), vec![true, true, true, false, false]);
        assert!(s.row(4).iter().all(|&v| v == 0.0));
        let unpadded = encode(&p, ContextInput::Tokens(&[0, 3, 4]), &[12, 0, 1]).unwrap();
        assert_eq!(unpadded.padded_to(5), s);
    }
}
