//! Model configuration and the full trainable parameter set.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PosTag;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{BiLstm, TanhLayer};

/// Which span of a causality is extracted first at each generation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ordering {
    #[serde(rename = "CF")]
    CauseFirst,
    #[serde(rename = "EF")]
    EffectFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanRole {
    Cause,
    Effect,
}

impl Ordering {
    pub fn first_role(self) -> SpanRole {
        match self {
            Ordering::CauseFirst => SpanRole::Cause,
            Ordering::EffectFirst => SpanRole::Effect,
        }
    }

    pub fn second_role(self) -> SpanRole {
        match self {
            Ordering::CauseFirst => SpanRole::Effect,
            Ordering::EffectFirst => SpanRole::Cause,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::CauseFirst => "CF",
            Ordering::EffectFirst => "EF",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CF" => Ok(Ordering::CauseFirst),
            "EF" => Ok(Ordering::EffectFirst),
            other => Err(Error::InvalidArgument(format!(
                "ordering must be CF or EF, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the contextual token vectors.
    pub context_dim: usize,
    /// Width of the POS-tag embeddings.
    pub pos_dim: usize,
    pub vocab_size: usize,
    /// Run a bidirectional LSTM over the token embeddings.
    pub recurrent: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            context_dim: 64,
            pos_dim: 32,
            vocab_size: 3,
            recurrent: true,
        }
    }
}

impl EncoderConfig {
    /// Hidden width shared by encoder states, decoder and pointer networks.
    pub fn d_h(&self) -> usize {
        self.context_dim + self.pos_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DimensionMismatch(m));
        if self.context_dim == 0 || self.pos_dim == 0 || self.vocab_size == 0 {
            return bad(format!("all encoder dimensions must be positive: {self:?}"));
        }
        if self.recurrent && !self.context_dim.is_multiple_of(2) {
            return bad(format!(
                "recurrent encoder splits context_dim across two directions; {} is odd",
                self.context_dim
            ));
        }
        if !self.d_h().is_multiple_of(2) {
            return bad(format!(
                "pointer networks split d_h across two directions; {} is odd",
                self.d_h()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub ordering: Ordering,
}

impl ModelConfig {
    pub fn d_h(&self) -> usize {
        self.encoder.d_h()
    }
}

/// One pointer network: a BiLSTM over per-position inputs and two scoring
/// vectors (start and end) applied to its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerParams {
    pub rnn: BiLstm,
    pub w_start: Vec<f64>,
    pub w_end: Vec<f64>,
}

impl PointerParams {
    fn zeros(input: usize, d_p: usize) -> Self {
        PointerParams {
            rnn: BiLstm::zeros(input, d_p / 2),
            w_start: vec![0.0; d_p],
            w_end: vec![0.0; d_p],
        }
    }

    fn init<R: Rng>(input: usize, d_p: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d_p as f64).sqrt();
        PointerParams {
            rnn: BiLstm::init(input, d_p / 2, rng),
            w_start: (0..d_p).map(|_| rng.gen_range(-scale..scale)).collect(),
            w_end: (0..d_p).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.rnn.fwd.input()
    }
}

/// Every trainable weight of the model. A value of this type also serves as
/// the gradient accumulator for itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab_size x context_dim`
    pub tok_emb: Mat,
    /// `PosTag::COUNT x pos_dim`
    pub pos_emb: Mat,
    pub enc_rnn: Option<BiLstm>,
    /// Additive attention: key projection, query projection and score vector.
    pub attn_key: Mat,
    pub attn_query: Mat,
    pub attn_v: Vec<f64>,
    /// Decoder cell over `[e_t ; y_avg]`.
    pub cell: crate::nn::Lstm,
    pub cause_ptr: PointerParams,
    pub effect_ptr: PointerParams,
    pub span_proj: TanhLayer,
    pub tuple_proj: TanhLayer,
}

/// Coarse parameter groups used when sampling gradient-check probes.
pub const PARAM_GROUPS: &[&str] = &[
    "tok_emb",
    "pos_emb",
    "enc_rnn",
    "attention",
    "cell",
    "cause_ptr",
    "effect_ptr",
    "span_proj",
    "tuple_proj",
];

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.encoder.validate()?;
        let e = config.encoder;
        let d = e.d_h();
        let (cause_in, effect_in) = pointer_inputs(config);
        Ok(ModelParams {
            config,
            tok_emb: Mat::zeros(e.vocab_size, e.context_dim),
            pos_emb: Mat::zeros(PosTag::COUNT, e.pos_dim),
            enc_rnn: e.recurrent.then(|| BiLstm::zeros(e.context_dim, e.context_dim / 2)),
            attn_key: Mat::zeros(d, d),
            attn_query: Mat::zeros(d, d),
            attn_v: vec![0.0; d],
            cell: crate::nn::Lstm::zeros(2 * d, d),
            cause_ptr: PointerParams::zeros(cause_in, d),
            effect_ptr: PointerParams::zeros(effect_in, d),
            span_proj: TanhLayer::zeros(d, d),
            tuple_proj: TanhLayer::zeros(2 * d, d),
        })
    }

    /// Seeded random initialization: embeddings uniform(-0.1, 0.1), recurrent
    /// weights uniform(-1/sqrt(h), 1/sqrt(h)), projections Glorot-uniform.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.encoder;
        let d = e.d_h();
        let (cause_in, effect_in) = pointer_inputs(config);
        let tok_emb = Mat::uniform(e.vocab_size, e.context_dim, 0.1, &mut rng);
        let pos_emb = Mat::uniform(PosTag::COUNT, e.pos_dim, 0.1, &mut rng);
        let enc_rnn = e
            .recurrent
            .then(|| BiLstm::init(e.context_dim, e.context_dim / 2, &mut rng));
        let attn_scale = (3.0 / d as f64).sqrt();
        let attn_key = Mat::uniform(d, d, attn_scale, &mut rng);
        let attn_query = Mat::uniform(d, d, attn_scale, &mut rng);
        let attn_v = (0..d).map(|_| rng.gen_range(-attn_scale..attn_scale)).collect();
        let cell = crate::nn::Lstm::init(2 * d, d, &mut rng);
        let cause_ptr = PointerParams::init(cause_in, d, &mut rng);
        let effect_ptr = PointerParams::init(effect_in, d, &mut rng);
        let span_proj = TanhLayer::init(d, d, &mut rng);
        let tuple_proj = TanhLayer::init(2 * d, d, &mut rng);
        Ok(ModelParams {
            config,
            tok_emb,
            pos_emb,
            enc_rnn,
            attn_key,
            attn_query,
            attn_v,
            cell,
            cause_ptr,
            effect_ptr,
            span_proj,
            tuple_proj,
        })
    }

    /// Every coordinate drawn from uniform(-scale, scale). Gives a generic
    /// point for gradient checks, away from the near-zero training init.
    pub fn uniform(config: ModelConfig, scale: f64, seed: u64) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, b) in p.blocks_mut() {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.config).expect("config was validated at construction")
    }

    pub fn d_h(&self) -> usize {
        self.config.d_h()
    }

    pub fn ordering(&self) -> Ordering {
        self.config.ordering
    }

    pub fn pointer(&self, role: SpanRole) -> &PointerParams {
        match role {
            SpanRole::Cause => &self.cause_ptr,
            SpanRole::Effect => &self.effect_ptr,
        }
    }

    pub fn pointer_mut(&mut self, role: SpanRole) -> &mut PointerParams {
        match role {
            SpanRole::Cause => &mut self.cause_ptr,
            SpanRole::Effect => &mut self.effect_ptr,
        }
    }

    /// Named parameter blocks in flat-view order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            ("tok_emb", self.tok_emb.as_slice()),
            ("pos_emb", self.pos_emb.as_slice()),
        ];
        if let Some(rnn) = &self.enc_rnn {
            v.extend([
                ("enc_rnn.fwd.wx", rnn.fwd.wx.as_slice()),
                ("enc_rnn.fwd.wh", rnn.fwd.wh.as_slice()),
                ("enc_rnn.fwd.b", rnn.fwd.b.as_slice()),
                ("enc_rnn.bwd.wx", rnn.bwd.wx.as_slice()),
                ("enc_rnn.bwd.wh", rnn.bwd.wh.as_slice()),
                ("enc_rnn.bwd.b", rnn.bwd.b.as_slice()),
            ]);
        }
        v.extend([
            ("attention.key", self.attn_key.as_slice()),
            ("attention.query", self.attn_query.as_slice()),
            ("attention.v", self.attn_v.as_slice()),
            ("cell.wx", self.cell.wx.as_slice()),
            ("cell.wh", self.cell.wh.as_slice()),
            ("cell.b", self.cell.b.as_slice()),
        ]);
        for (name, p) in [("cause_ptr", &self.cause_ptr), ("effect_ptr", &self.effect_ptr)] {
            let names = pointer_block_names(name);
            v.extend([
                (names[0], p.rnn.fwd.wx.as_slice()),
                (names[1], p.rnn.fwd.wh.as_slice()),
                (names[2], p.rnn.fwd.b.as_slice()),
                (names[3], p.rnn.bwd.wx.as_slice()),
                (names[4], p.rnn.bwd.wh.as_slice()),
                (names[5], p.rnn.bwd.b.as_slice()),
                (names[6], p.w_start.as_slice()),
                (names[7], p.w_end.as_slice()),
            ]);
        }
        v.extend([
            ("span_proj.w", self.span_proj.w.as_slice()),
            ("span_proj.b", self.span_proj.b.as_slice()),
            ("tuple_proj.w", self.tuple_proj.w.as_slice()),
            ("tuple_proj.b", self.tuple_proj.b.as_slice()),
        ]);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v: Vec<(&'static str, &mut [f64])> = vec![
            ("tok_emb", self.tok_emb.as_mut_slice()),
            ("pos_emb", self.pos_emb.as_mut_slice()),
        ];
        if let Some(rnn) = &mut self.enc_rnn {
            v.extend([
                ("enc_rnn.fwd.wx", rnn.fwd.wx.as_mut_slice()),
                ("enc_rnn.fwd.wh", rnn.fwd.wh.as_mut_slice()),
                ("enc_rnn.fwd.b", rnn.fwd.b.as_mut_slice()),
                ("enc_rnn.bwd.wx", rnn.bwd.wx.as_mut_slice()),
                ("enc_rnn.bwd.wh", rnn.bwd.wh.as_mut_slice()),
                ("enc_rnn.bwd.b", rnn.bwd.b.as_mut_slice()),
            ]);
        }
        v.extend([
            ("attention.key", self.attn_key.as_mut_slice()),
            ("attention.query", self.attn_query.as_mut_slice()),
            ("attention.v", self.attn_v.as_mut_slice()),
            ("cell.wx", self.cell.wx.as_mut_slice()),
            ("cell.wh", self.cell.wh.as_mut_slice()),
            ("cell.b", self.cell.b.as_mut_slice()),
        ]);
        for (name, p) in [("cause_ptr", &mut self.cause_ptr), ("effect_ptr", &mut self.effect_ptr)] {
            let names = pointer_block_names(name);
            v.extend([
                (names[0], p.rnn.fwd.wx.as_mut_slice()),
                (names[1], p.rnn.fwd.wh.as_mut_slice()),
                (names[2], p.rnn.fwd.b.as_mut_slice()),
                (names[3], p.rnn.bwd.wx.as_mut_slice()),
                (names[4], p.rnn.bwd.wh.as_mut_slice()),
                (names[5], p.rnn.bwd.b.as_mut_slice()),
                (names[6], p.w_start.as_mut_slice()),
                (names[7], p.w_end.as_mut_slice()),
            ]);
        }
        v.extend([
            ("span_proj.w", self.span_proj.w.as_mut_slice()),
            ("span_proj.b", self.span_proj.b.as_mut_slice()),
            ("tuple_proj.w", self.tuple_proj.w.as_mut_slice()),
            ("tuple_proj.b", self.tuple_proj.b.as_mut_slice()),
        ]);
        v
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, b) in self.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has {} values, model needs {expected}",
                flat.len()
            )));
        }
        let mut off = 0;
        for (_, b) in self.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(())
    }

    pub fn from_flat(config: ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut p = ModelParams::zeros(config)?;
        p.set_flat(flat)?;
        Ok(p)
    }

    /// Returns the block name and offset within it for a flat index.
    pub fn locate(&self, mut index: usize) -> Option<(&'static str, usize)> {
        for (name, b) in self.blocks() {
            if index < b.len() {
                return Some((name, index));
            }
            index -= b.len();
        }
        None
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut index = index;
        for (_, b) in self.blocks() {
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat_at(&mut self, index: usize, value: f64) {
        let mut index = index;
        for (_, b) in self.blocks_mut() {
            if index < b.len() {
                b[index] = value;
                return;
            }
            index -= b.len();
        }
        panic!("flat index out of range");
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            crate::linalg::axpy(alpha, b, a);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, b) in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the little-endian bytes of the flat view.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, b) in self.blocks() {
            for v in b {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

/// Coarse group (one of [`PARAM_GROUPS`]) of a block name.
pub fn group_of(block: &str) -> &'static str {
    let head = block.split('.').next().unwrap_or(block);
    PARAM_GROUPS.iter().copied().find(|g| *g == head).unwrap_or("other")
}

fn pointer_block_names(prefix: &str) -> [&'static str; 8] {
    if prefix == "cause_ptr" {
        [
            "cause_ptr.fwd.wx",
            "cause_ptr.fwd.wh",
            "cause_ptr.fwd.b",
            "cause_ptr.bwd.wx",
            "cause_ptr.bwd.wh",
            "cause_ptr.bwd.b",
            "cause_ptr.w_start",
            "cause_ptr.w_end",
        ]
    } else {
        [
            "effect_ptr.fwd.wx",
            "effect_ptr.fwd.wh",
            "effect_ptr.fwd.b",
            "effect_ptr.bwd.wx",
            "effect_ptr.bwd.wh",
            "effect_ptr.bwd.b",
            "effect_ptr.w_start",
            "effect_ptr.w_end",
        ]
    }
}

/// Input widths of the (cause, effect) pointer networks. The first-extracted
/// role sees `[h_i ; h_dec]`; the second also sees the first span's vector.
fn pointer_inputs(config: ModelConfig) -> (usize, usize) {
    let d = config.d_h();
    match config.ordering {
        Ordering::CauseFirst => (2 * d, 3 * d),
        Ordering::EffectFirst => (3 * d, 2 * d),
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ordering: Ordering) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                context_dim: 4,
                pos_dim: 4,
                vocab_size: 7,
                recurrent: true,
            },
            ordering,
        }
    }

    #[test]
    fn flat_view_round_trips() {
        let p = ModelParams::init(cfg(Ordering::CauseFirst), 5).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.num_params());
        let q = ModelParams::from_flat(p.config, &flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.checksum(), q.checksum());
        let (name, off) = p.locate(flat.len() - 1).unwrap();
        assert_eq!(name, "tuple_proj.b");
        assert_eq!(off, p.d_h() - 1);
    }

    #[test]
    fn pointer_widths_follow_ordering() {
        let cf = ModelParams::zeros(cfg(Ordering::CauseFirst)).unwrap();
        assert_eq!(cf.cause_ptr.input_width(), 16);
        assert_eq!(cf.effect_ptr.input_width(), 24);
        let ef = ModelParams::zeros(cfg(Ordering::EffectFirst)).unwrap();
        assert_eq!(ef.cause_ptr.input_width(), 24);
        assert_eq!(ef.effect_ptr.input_width(), 16);
    }

    #[test]
    fn odd_dims_rejected() {
        let mut c = cfg(Ordering::CauseFirst);
        c.encoder.context_dim = 3;
        assert!(ModelParams::zeros(c).is_err());
        c.encoder.recurrent = false;
        c.encoder.pos_dim = 3;
        assert!(ModelParams::zeros(c).is_ok());
    }

    #[test]
    fn every_block_has_a_group() {
        let p = ModelParams::zeros(cfg(Ordering::EffectFirst)).unwrap();
        for (name, _) in p.blocks() {
            assert_ne!(group_of(name), "other", "{name}");
        }
    }

    #[test]
    fn ordering_parses() {
        assert_eq!("cf".parse::<Ordering>().unwrap(), Ordering::CauseFirst);
        assert_eq!("EF".parse::<Ordering>().unwrap(), Ordering::EffectFirst);
        assert!("XF".parse::<Ordering>().is_err());
    }
}
