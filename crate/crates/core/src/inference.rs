//! Greedy constrained decoding of causality tuples.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Causality, Example, Segment};
use crate::decoder::{
    attention_forward, decode_step_forward, pointer_forward, span_forward, tuple_forward, DecoderState, SourceContext,
    SpanDistributions, TupleMemory,
};
use crate::encoder::{encode, tag_ids, ContextInput, PrecomputedVectors, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Ordering, SpanRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_steps: usize,
    /// `None` allows spans up to the segment length.
    pub max_span_len: Option<usize>,
    /// Stop when a tuple repeats an earlier one.
    pub dedup: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_steps: 8,
            max_span_len: None,
            dedup: true,
        }
    }
}

/// Best `(start, end, log score)` with `1 <= start <= end <= n` and
/// `end - start + 1 <= max_span_len`, maximizing `ln p_start + ln p_end`.
/// Ties go to the smaller start, then the smaller end.
pub fn constrained_span_argmax(
    dist: &SpanDistributions,
    n: usize,
    max_span_len: Option<usize>,
) -> Result<(usize, usize, f64)> {
    if dist.start.len() <= n || dist.end.len() <= n {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {}/{} cannot cover n = {n}",
            dist.start.len(),
            dist.end.len()
        )));
    }
    let window = max_span_len.unwrap_or(n).max(1);
    let ls: Vec<f64> = dist.start.iter().map(|p| p.ln()).collect();
    // Candidate starts in the window, decreasing score; equal scores keep the
    // earlier start in front.
    let mut cands: VecDeque<usize> = VecDeque::new();
    let mut best: Option<(usize, usize, f64)> = None;
    for e in 1..=n {
        while cands.back().is_some_and(|&s| ls[s] < ls[e]) {
            cands.pop_back();
        }
        cands.push_back(e);
        while cands.front().is_some_and(|&s| s + window <= e) {
            cands.pop_front();
        }
        let s = *cands.front().expect("window always holds e");
        let score = ls[s] + dist.end[e].ln();
        if score == f64::NEG_INFINITY || score.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, _, bscore)) => score > bscore || (score == bscore && s < bs),
        };
        if better {
            best = Some((s, e, score));
        }
    }
    best.ok_or(Error::NoValidSpan)
}

/// Source of per-step distributions for [`decode_with`].
pub trait TupleScorer {
    /// Advance one step and score the first-extracted span.
    fn first(&mut self) -> Result<SpanDistributions>;
    /// Score the second-extracted span given the chosen first span.
    fn second(&mut self, first_span: (usize, usize)) -> Result<SpanDistributions>;
    /// Record an emitted tuple before the next step.
    fn commit(&mut self, cause: (usize, usize), effect: (usize, usize)) -> Result<()>;
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding loop over a segment of `n` tokens.
///
/// A step stops decoding when the first head's start distribution peaks at
/// position 0, when no valid span has mass, or when a tuple repeats (with
/// `dedup`). At most `max_steps` tuples are emitted.
pub fn decode_with<S: TupleScorer + ?Sized>(
    scorer: &mut S,
    n: usize,
    ordering: Ordering,
    config: &DecodeConfig,
) -> Result<Vec<Causality>> {
    let mut out: Vec<Causality> = Vec::new();
    for _ in 0..config.max_steps {
        let first = scorer.first()?;
        if argmax(&first.start) == 0 {
            break;
        }
        let (s1, e1) = match constrained_span_argmax(&first, n, config.max_span_len) {
            Ok((s, e, _)) => (s, e),
            Err(Error::NoValidSpan) => break,
            Err(e) => return Err(e),
        };
        let second = scorer.second((s1, e1))?;
        let (s2, e2) = match constrained_span_argmax(&second, n, config.max_span_len) {
            Ok((s, e, _)) => (s, e),
            Err(Error::NoValidSpan) => break,
            Err(e) => return Err(e),
        };
        let tuple = match ordering {
            Ordering::CauseFirst => Causality::new((s1, e1), (s2, e2)),
            Ordering::EffectFirst => Causality::new((s2, e2), (s1, e1)),
        };
        if config.dedup && out.contains(&tuple) {
            break;
        }
        out.push(tuple);
        scorer.commit(tuple.cause(), tuple.effect())?;
    }
    Ok(out)
}

/// Drives the model: predicted spans feed the conditioning vector and the
/// tuple memory.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    ctx: SourceContext,
    state: DecoderState,
    memory: TupleMemory,
    first_vec: Option<((usize, usize), Vec<f64>)>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, ctx: SourceContext) -> Self {
        let d = params.d_h();
        ModelScorer {
            params,
            ctx,
            state: DecoderState::initial(d),
            memory: TupleMemory::new(d),
            first_vec: None,
        }
    }

    pub fn memory(&self) -> &TupleMemory {
        &self.memory
    }
}

impl TupleScorer for ModelScorer<'_> {
    fn first(&mut self) -> Result<SpanDistributions> {
        let p = self.params;
        let (e_t, _) = attention_forward(p, &self.ctx, &self.state.hidden);
        let (next, _) = decode_step_forward(p, &self.state, &e_t, self.memory.y_avg());
        self.state = next;
        self.first_vec = None;
        let role = p.ordering().first_role();
        Ok(pointer_forward(p, role, &self.ctx, &self.state.hidden, None, true)?.dists)
    }

    fn second(&mut self, first_span: (usize, usize)) -> Result<SpanDistributions> {
        let p = self.params;
        let v = span_forward(p, &self.ctx.states, first_span)?.out;
        let role = p.ordering().second_role();
        let dists = pointer_forward(p, role, &self.ctx, &self.state.hidden, Some(&v), false)?.dists;
        self.first_vec = Some((first_span, v));
        Ok(dists)
    }

    fn commit(&mut self, cause: (usize, usize), effect: (usize, usize)) -> Result<()> {
        let p = self.params;
        let span_vec = |span: (usize, usize)| -> Result<Vec<f64>> {
            match &self.first_vec {
                Some((s, v)) if *s == span => Ok(v.clone()),
                _ => Ok(span_forward(p, &self.ctx.states, span)?.out),
            }
        };
        let (cv, ev) = match p.ordering().first_role() {
            SpanRole::Cause => (span_vec(cause)?, span_forward(p, &self.ctx.states, effect)?.out),
            SpanRole::Effect => (span_forward(p, &self.ctx.states, cause)?.out, span_vec(effect)?),
        };
        let (tv, _) = tuple_forward(p, &cv, &ev);
        self.memory.push(tv);
        Ok(())
    }
}

/// Encodes `segment` (from precomputed vectors when given, else from the
/// vocabulary) and prepares the decoder's source context.
pub fn source_for_segment(
    params: &ModelParams,
    segment: &Segment,
    vocab: &Vocabulary,
    vectors: Option<&PrecomputedVectors>,
) -> Result<SourceContext> {
    let tags = tag_ids(segment);
    let states = match vectors {
        Some(v) => {
            let m = v.for_segment(segment, params.config.encoder.context_dim)?;
            encode(params, ContextInput::Precomputed(m), &tags)?
        }
        None => {
            let ids = vocab.encode(segment);
            encode(params, ContextInput::Tokens(&ids), &tags)?
        }
    };
    SourceContext::new(params, states)
}

pub fn decode(params: &ModelParams, ctx: SourceContext, config: &DecodeConfig) -> Result<Vec<Causality>> {
    let n = ctx.states.n();
    let mut scorer = ModelScorer::new(params, ctx);
    decode_with(&mut scorer, n, params.ordering(), config)
}

pub fn decode_segment(
    params: &ModelParams,
    segment: &Segment,
    vocab: &Vocabulary,
    vectors: Option<&PrecomputedVectors>,
    config: &DecodeConfig,
) -> Result<Vec<Causality>> {
    decode(params, source_for_segment(params, segment, vocab, vectors)?, config)
}

/// Predicted tuples keyed by segment id, plus any per-segment failures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub tuples: BTreeMap<String, Vec<Causality>>,
    pub failures: BTreeMap<String, String>,
}

pub fn predict_corpus(
    examples: &[Example],
    params: &ModelParams,
    vocab: &Vocabulary,
    vectors: Option<&PrecomputedVectors>,
    config: &DecodeConfig,
) -> Predictions {
    let mut out = Predictions::default();
    for ex in examples {
        match decode_segment(params, &ex.segment, vocab, vectors, config) {
            Ok(t) => {
                out.tuples.insert(ex.id().to_string(), t);
            }
            Err(e) => {
                out.failures.insert(ex.id().to_string(), e.to_string());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictedTuple {
    c_s: usize,
    c_e: usize,
    e_s: usize,
    e_e: usize,
    cause_text: String,
    effect_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    tuples: Vec<PredictedTuple>,
}

/// One record per line, ordered by id. Span texts come from the segments'
/// character offsets.
pub fn write_predictions<W: Write>(
    mut w: W,
    examples: &[Example],
    preds: &BTreeMap<String, Vec<Causality>>,
) -> Result<()> {
    let segments: BTreeMap<&str, &Segment> = examples.iter().map(|e| (e.id(), &e.segment)).collect();
    for (id, tuples) in preds {
        let seg = segments.get(id.as_str()).ok_or_else(|| Error::UnknownId(id.clone()))?;
        let rec = PredictionRecord {
            id: id.clone(),
            tuples: tuples
                .iter()
                .map(|t| PredictedTuple {
                    c_s: t.c_s,
                    c_e: t.c_e,
                    e_s: t.e_s,
                    e_e: t.e_e,
                    cause_text: seg.span_text(t.c_s, t.c_e),
                    effect_text: seg.span_text(t.e_s, t.e_e),
                })
                .collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<BTreeMap<String, Vec<Causality>>> {
    let mut out = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<predictions>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let tuples = rec
            .tuples
            .iter()
            .map(|t| Causality::new((t.c_s, t.c_e), (t.e_s, t.e_e)))
            .collect();
        out.insert(rec.id, tuples);
    }
    Ok(out)
}
