//! One generation step: additive attention over the encoder states, the
//! decoder LSTM cell over `[e_t ; y_avg]`, and the two pointer networks that
//! score span starts and ends.
//!
//! Each piece exposes a forward pass that returns a cache and a backward pass
//! that consumes it; the `pub fn`s at the bottom are forward-only wrappers.

use crate::encoder::EncoderStates;
use crate::error::{Error, Result};
use crate::inference::constrained_span_argmax;
use crate::linalg::{add_assign, axpy, concat, dot, masked_softmax, Mat};
use crate::model::{ModelParams, PointerParams, SpanRole};
use crate::nn::{BiLstmCache, CellCache};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Number of steps taken so far.
    pub t: usize,
}

impl DecoderState {
    pub fn initial(d_h: usize) -> Self {
        DecoderState {
            hidden: vec![0.0; d_h],
            cell: vec![0.0; d_h],
            t: 0,
        }
    }
}

/// Vectors of the causalities generated so far and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleMemory {
    vectors: Vec<Vec<f64>>,
    y_avg: Vec<f64>,
}

impl TupleMemory {
    /// Empty memory; `y_avg` is the zero vector, standing in for the start tuple.
    pub fn new(d_h: usize) -> Self {
        TupleMemory {
            vectors: Vec::new(),
            y_avg: vec![0.0; d_h],
        }
    }

    pub fn push(&mut self, v: Vec<f64>) {
        assert_eq!(v.len(), self.y_avg.len(), "tuple vector width");
        self.vectors.push(v);
        let k = self.vectors.len() as f64;
        let mut sum = vec![0.0; self.y_avg.len()];
        for v in &self.vectors {
            add_assign(&mut sum, v);
        }
        self.y_avg = sum.into_iter().map(|s| s / k).collect();
    }

    pub fn y_avg(&self) -> &[f64] {
        &self.y_avg
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Start and end probabilities over positions `0..rows` of the encoder states.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistributions {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Positions admissible as a span start when stopping is allowed: `0..=n`.
pub fn stop_mask(states: &EncoderStates) -> Vec<bool> {
    states.mask()
}

/// Positions admissible as a real span boundary: `1..=n`.
pub fn span_mask(states: &EncoderStates) -> Vec<bool> {
    let mut m = states.mask();
    m[0] = false;
    m
}

/// Per-position input projections of the encoder rows for one pointer network.
#[derive(Debug, Clone)]
pub(crate) struct PointerPre {
    zf: Vec<Vec<f64>>,
    zb: Vec<Vec<f64>>,
}

/// Encoder states plus every step-invariant projection of them.
#[derive(Debug, Clone)]
pub struct SourceContext {
    pub states: EncoderStates,
    keys: Vec<Vec<f64>>,
    cause_pre: PointerPre,
    effect_pre: PointerPre,
}

impl SourceContext {
    pub fn new(params: &ModelParams, states: EncoderStates) -> Result<Self> {
        let d = params.d_h();
        if states.width() != d {
            return Err(Error::DimensionMismatch(format!(
                "encoder width {} != d_h {d}",
                states.width()
            )));
        }
        let keys = (0..states.valid_len)
            .map(|i| params.attn_key.matvec(states.row(i)))
            .collect();
        let cause_pre = pointer_pre(&params.cause_ptr, &states);
        let effect_pre = pointer_pre(&params.effect_ptr, &states);
        Ok(SourceContext {
            states,
            keys,
            cause_pre,
            effect_pre,
        })
    }

    pub(crate) fn pre(&self, role: SpanRole) -> &PointerPre {
        match role {
            SpanRole::Cause => &self.cause_pre,
            SpanRole::Effect => &self.effect_pre,
        }
    }
}

/// Gradient accumulators for the step-invariant projections.
pub(crate) struct SourceGrads {
    pub d_states: Mat,
    d_keys: Vec<Vec<f64>>,
    d_cause_pre: PointerPre,
    d_effect_pre: PointerPre,
}

impl SourceGrads {
    pub fn new(ctx: &SourceContext) -> Self {
        let zeros_like = |p: &PointerPre| PointerPre {
            zf: p.zf.iter().map(|v| vec![0.0; v.len()]).collect(),
            zb: p.zb.iter().map(|v| vec![0.0; v.len()]).collect(),
        };
        SourceGrads {
            d_states: Mat::zeros(ctx.states.rows(), ctx.states.width()),
            d_keys: ctx.keys.iter().map(|k| vec![0.0; k.len()]).collect(),
            d_cause_pre: zeros_like(&ctx.cause_pre),
            d_effect_pre: zeros_like(&ctx.effect_pre),
        }
    }

    fn pre_mut(&mut self, role: SpanRole) -> &mut PointerPre {
        match role {
            SpanRole::Cause => &mut self.d_cause_pre,
            SpanRole::Effect => &mut self.d_effect_pre,
        }
    }

    /// Pushes the accumulated projection gradients back to the weights and
    /// into `d_states`.
    pub fn finish(&mut self, params: &ModelParams, ctx: &SourceContext, grads: &mut ModelParams) {
        let d = params.d_h();
        for i in 0..ctx.states.valid_len {
            let h = ctx.states.row(i);
            grads.attn_key.add_outer(&self.d_keys[i], h);
            params.attn_key.tmatvec_acc(&self.d_keys[i], self.d_states.row_mut(i));
        }
        for role in [SpanRole::Cause, SpanRole::Effect] {
            let ptr = params.pointer(role);
            let dpre = match role {
                SpanRole::Cause => &self.d_cause_pre,
                SpanRole::Effect => &self.d_effect_pre,
            };
            let g = grads.pointer_mut(role);
            for i in 0..ctx.states.valid_len {
                let h = ctx.states.row(i);
                g.rnn.fwd.wx.add_outer_cols(0, &dpre.zf[i], h);
                g.rnn.bwd.wx.add_outer_cols(0, &dpre.zb[i], h);
                let row = self.d_states.row_mut(i);
                ptr.rnn.fwd.wx.tmatvec_cols_acc(0, &dpre.zf[i], &mut row[..d]);
                ptr.rnn.bwd.wx.tmatvec_cols_acc(0, &dpre.zb[i], &mut row[..d]);
            }
        }
    }
}

// ---------------------------------------------------------------- attention

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    h_prev: Vec<f64>,
    u: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

pub(crate) fn attention_forward(
    params: &ModelParams,
    ctx: &SourceContext,
    h_prev: &[f64],
) -> (Vec<f64>, AttentionCache) {
    let d = params.d_h();
    let states = &ctx.states;
    let q = params.attn_query.matvec(h_prev);
    let mut scores = vec![0.0; states.rows()];
    let mut u = Vec::with_capacity(states.valid_len);
    for i in 0..states.valid_len {
        let ui: Vec<f64> = ctx.keys[i].iter().zip(&q).map(|(k, q)| (k + q).tanh()).collect();
        scores[i] = dot(&params.attn_v, &ui);
        u.push(ui);
    }
    let alpha = masked_softmax(&scores, &states.mask());
    let mut e = vec![0.0; d];
    for (i, &a) in alpha.iter().enumerate().take(states.valid_len) {
        axpy(a, states.row(i), &mut e);
    }
    let cache = AttentionCache {
        h_prev: h_prev.to_vec(),
        u,
        alpha,
    };
    (e, cache)
}

/// Returns the gradient with respect to the query (previous decoder hidden).
pub(crate) fn attention_backward(
    params: &ModelParams,
    ctx: &SourceContext,
    cache: &AttentionCache,
    de: &[f64],
    grads: &mut ModelParams,
    src: &mut SourceGrads,
) -> Vec<f64> {
    let d = params.d_h();
    let valid = ctx.states.valid_len;
    let d_alpha: Vec<f64> = (0..valid).map(|i| dot(de, ctx.states.row(i))).collect();
    let inner: f64 = (0..valid).map(|i| cache.alpha[i] * d_alpha[i]).sum();
    let mut dq = vec![0.0; d];
    for i in 0..valid {
        let a = cache.alpha[i];
        axpy(a, de, src.d_states.row_mut(i));
        let ds = a * (d_alpha[i] - inner);
        if ds == 0.0 {
            continue;
        }
        axpy(ds, &cache.u[i], &mut grads.attn_v);
        let dpre: Vec<f64> = cache.u[i]
            .iter()
            .zip(&params.attn_v)
            .map(|(u, v)| ds * v * (1.0 - u * u))
            .collect();
        add_assign(&mut src.d_keys[i], &dpre);
        add_assign(&mut dq, &dpre);
    }
    grads.attn_query.add_outer(&dq, &cache.h_prev);
    let mut dh = vec![0.0; d];
    params.attn_query.tmatvec_acc(&dq, &mut dh);
    dh
}

// ------------------------------------------------------------- decoder cell

#[derive(Debug, Clone)]
pub(crate) struct CellStepCache {
    x: Vec<f64>,
    cell: CellCache,
}

pub(crate) fn decode_step_forward(
    params: &ModelParams,
    state: &DecoderState,
    e_t: &[f64],
    y_avg: &[f64],
) -> (DecoderState, CellStepCache) {
    let x = concat(&[e_t, y_avg]);
    let zx = params.cell.wx.matvec(&x);
    let (h, c, cell) = params.cell.cell_forward(&zx, &state.hidden, &state.cell);
    (
        DecoderState {
            hidden: h,
            cell: c,
            t: state.t + 1,
        },
        CellStepCache { x, cell },
    )
}

/// Returns `(d e_t, d y_avg, d h_prev, d c_prev)`.
pub(crate) fn decode_step_backward(
    params: &ModelParams,
    cache: &CellStepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut ModelParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = params.d_h();
    let (dz, dh_prev, dc_prev) = params.cell.cell_backward(&cache.cell, dh, dc, &mut grads.cell);
    grads.cell.wx.add_outer(&dz, &cache.x);
    let mut dx = vec![0.0; 2 * d];
    params.cell.wx.tmatvec_acc(&dz, &mut dx);
    let dy = dx.split_off(d);
    (dx, dy, dh_prev, dc_prev)
}

// ---------------------------------------------------------- pointer networks

fn pointer_pre(ptr: &PointerParams, states: &EncoderStates) -> PointerPre {
    let hf = ptr.rnn.fwd.hidden();
    let hb = ptr.rnn.bwd.hidden();
    let mut zf = Vec::with_capacity(states.valid_len);
    let mut zb = Vec::with_capacity(states.valid_len);
    for i in 0..states.valid_len {
        let h = states.row(i);
        let mut f = vec![0.0; 4 * hf];
        ptr.rnn.fwd.wx.matvec_cols_acc(0, h, &mut f);
        let mut b = vec![0.0; 4 * hb];
        ptr.rnn.bwd.wx.matvec_cols_acc(0, h, &mut b);
        zf.push(f);
        zb.push(b);
    }
    PointerPre { zf, zb }
}

#[derive(Debug, Clone)]
pub(crate) struct PointerCache {
    shared: Vec<f64>,
    rnn: BiLstmCache,
    g: Vec<Vec<f64>>,
    pub dists: SpanDistributions,
}

/// Scores every position given the decoder hidden state and, for the
/// second-extracted span, the first span's vector. Position 0 is admissible
/// as a start only when `allow_stop` is set; it is never an end.
pub(crate) fn pointer_forward(
    params: &ModelParams,
    role: SpanRole,
    ctx: &SourceContext,
    decoder_hidden: &[f64],
    conditioning: Option<&[f64]>,
    allow_stop: bool,
) -> Result<PointerCache> {
    let d = params.d_h();
    let ptr = params.pointer(role);
    let shared = match conditioning {
        Some(c) => concat(&[decoder_hidden, c]),
        None => decoder_hidden.to_vec(),
    };
    if d + shared.len() != ptr.input_width() {
        return Err(Error::DimensionMismatch(format!(
            "{role:?} pointer expects input width {}, got {} (conditioning {})",
            ptr.input_width(),
            d + shared.len(),
            if conditioning.is_some() { "present" } else { "absent" }
        )));
    }
    let pre = ctx.pre(role);
    let mut sf = vec![0.0; ptr.rnn.fwd.wx.rows()];
    ptr.rnn.fwd.wx.matvec_cols_acc(d, &shared, &mut sf);
    let mut sb = vec![0.0; ptr.rnn.bwd.wx.rows()];
    ptr.rnn.bwd.wx.matvec_cols_acc(d, &shared, &mut sb);
    let zf: Vec<Vec<f64>> = pre
        .zf
        .iter()
        .map(|z| z.iter().zip(&sf).map(|(a, b)| a + b).collect())
        .collect();
    let zb: Vec<Vec<f64>> = pre
        .zb
        .iter()
        .map(|z| z.iter().zip(&sb).map(|(a, b)| a + b).collect())
        .collect();
    let (g, rnn) = ptr.rnn.forward(&zf, &zb);

    let rows = ctx.states.rows();
    let mut ls = vec![0.0; rows];
    let mut le = vec![0.0; rows];
    for (i, gi) in g.iter().enumerate() {
        ls[i] = dot(&ptr.w_start, gi);
        le[i] = dot(&ptr.w_end, gi);
    }
    let end_mask = span_mask(&ctx.states);
    let start_mask = if allow_stop {
        stop_mask(&ctx.states)
    } else {
        end_mask.clone()
    };
    let dists = SpanDistributions {
        start: masked_softmax(&ls, &start_mask),
        end: masked_softmax(&le, &end_mask),
    };
    Ok(PointerCache { shared, rnn, g, dists })
}

/// `dl_start` / `dl_end` are gradients of the start/end logits. Returns the
/// gradient of the shared input `[decoder_hidden ; conditioning?]`.
pub(crate) fn pointer_backward(
    params: &ModelParams,
    role: SpanRole,
    cache: &PointerCache,
    dl_start: &[f64],
    dl_end: &[f64],
    grads: &mut ModelParams,
    src: &mut SourceGrads,
) -> Vec<f64> {
    let d = params.d_h();
    let ptr = params.pointer(role);
    let d_p = ptr.w_start.len();
    let g_ptr = grads.pointer_mut(role);
    let mut dg = Vec::with_capacity(cache.g.len());
    for (i, gi) in cache.g.iter().enumerate() {
        let mut v = vec![0.0; d_p];
        axpy(dl_start[i], &ptr.w_start, &mut v);
        axpy(dl_end[i], &ptr.w_end, &mut v);
        axpy(dl_start[i], gi, &mut g_ptr.w_start);
        axpy(dl_end[i], gi, &mut g_ptr.w_end);
        dg.push(v);
    }
    let (dzf, dzb) = ptr.rnn.backward(&cache.rnn, &dg, &mut g_ptr.rnn);
    let mut sf = vec![0.0; ptr.rnn.fwd.wx.rows()];
    let mut sb = vec![0.0; ptr.rnn.bwd.wx.rows()];
    let dpre = src.pre_mut(role);
    for i in 0..dzf.len() {
        add_assign(&mut dpre.zf[i], &dzf[i]);
        add_assign(&mut dpre.zb[i], &dzb[i]);
        add_assign(&mut sf, &dzf[i]);
        add_assign(&mut sb, &dzb[i]);
    }
    g_ptr.rnn.fwd.wx.add_outer_cols(d, &sf, &cache.shared);
    g_ptr.rnn.bwd.wx.add_outer_cols(d, &sb, &cache.shared);
    let mut d_shared = vec![0.0; cache.shared.len()];
    ptr.rnn.fwd.wx.tmatvec_cols_acc(d, &sf, &mut d_shared);
    ptr.rnn.bwd.wx.tmatvec_cols_acc(d, &sb, &mut d_shared);
    d_shared
}

// ------------------------------------------------------- span/tuple vectors

#[derive(Debug, Clone)]
pub(crate) struct SpanCache {
    start: usize,
    end: usize,
    mean: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn span_forward(params: &ModelParams, states: &EncoderStates, span: (usize, usize)) -> Result<SpanCache> {
    let (start, end) = span;
    let n = states.n();
    if start < 1 || start > end || end > n {
        return Err(Error::InvalidSpan { start, end, n });
    }
    let mut mean = vec![0.0; states.width()];
    for i in start..=end {
        add_assign(&mut mean, states.row(i));
    }
    let k = (end - start + 1) as f64;
    mean.iter_mut().for_each(|v| *v /= k);
    let out = params.span_proj.forward(&mean);
    Ok(SpanCache { start, end, mean, out })
}

pub(crate) fn span_backward(
    params: &ModelParams,
    cache: &SpanCache,
    d_out: &[f64],
    grads: &mut ModelParams,
    d_states: &mut Mat,
) {
    let dm = params
        .span_proj
        .backward(&cache.mean, &cache.out, d_out, &mut grads.span_proj);
    let k = (cache.end - cache.start + 1) as f64;
    for i in cache.start..=cache.end {
        axpy(1.0 / k, &dm, d_states.row_mut(i));
    }
}

/// Returns `(tuple vector, projection input)`.
pub(crate) fn tuple_forward(params: &ModelParams, cause_vec: &[f64], effect_vec: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let x = concat(&[cause_vec, effect_vec]);
    (params.tuple_proj.forward(&x), x)
}

/// Returns `(d cause_vec, d effect_vec)`.
pub(crate) fn tuple_backward(
    params: &ModelParams,
    x: &[f64],
    out: &[f64],
    d_out: &[f64],
    grads: &mut ModelParams,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = params.tuple_proj.backward(x, out, d_out, &mut grads.tuple_proj);
    let de = dx.split_off(params.d_h());
    (dx, de)
}

// ------------------------------------------------------------ public surface

fn check_width(what: &str, v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what} has width {}, expected {d}",
            v.len()
        )));
    }
    Ok(())
}

/// Attention context `e_t` for the given previous decoder hidden state.
pub fn attention(params: &ModelParams, states: &EncoderStates, prev_hidden: &[f64]) -> Result<Vec<f64>> {
    check_width("previous decoder hidden", prev_hidden, params.d_h())?;
    let ctx = SourceContext::new(params, states.clone())?;
    Ok(attention_forward(params, &ctx, prev_hidden).0)
}

/// Advances the decoder cell on `[e_t ; y_avg]`.
pub fn decode_step(
    params: &ModelParams,
    state: &DecoderState,
    e_t: &[f64],
    memory: &TupleMemory,
) -> Result<DecoderState> {
    let d = params.d_h();
    check_width("e_t", e_t, d)?;
    check_width("y_avg", memory.y_avg(), d)?;
    check_width("decoder hidden", &state.hidden, d)?;
    check_width("decoder cell", &state.cell, d)?;
    Ok(decode_step_forward(params, state, e_t, memory.y_avg()).0)
}

/// Start/end distributions of the `role` pointer network. Without a
/// conditioning vector the start head may point at position 0 (stop).
pub fn pointer_scores(
    params: &ModelParams,
    role: SpanRole,
    states: &EncoderStates,
    decoder_hidden: &[f64],
    conditioning: Option<&[f64]>,
) -> Result<SpanDistributions> {
    let d = params.d_h();
    check_width("decoder hidden", decoder_hidden, d)?;
    if let Some(c) = conditioning {
        check_width("conditioning span vector", c, d)?;
    }
    let ctx = SourceContext::new(params, states.clone())?;
    pointer_forward(params, role, &ctx, decoder_hidden, conditioning, conditioning.is_none()).map(|c| c.dists)
}

/// `tanh(A · mean(h_start..=h_end) + a)`
pub fn span_vector(params: &ModelParams, states: &EncoderStates, span: (usize, usize)) -> Result<Vec<f64>> {
    check_width("encoder states", states.row(0), params.d_h())?;
    span_forward(params, states, span).map(|c| c.out)
}

/// `tanh(B · [cause ; effect] + b)`
pub fn causality_vector(params: &ModelParams, cause_vec: &[f64], effect_vec: &[f64]) -> Result<Vec<f64>> {
    let d = params.d_h();
    check_width("cause vector", cause_vec, d)?;
    check_width("effect vector", effect_vec, d)?;
    Ok(tuple_forward(params, cause_vec, effect_vec).0)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Distributions of the first-extracted role (cause for CF).
    pub first: SpanDistributions,
    /// Distributions of the second-extracted role, conditioned on `first_span`.
    pub second: SpanDistributions,
    pub first_span: (usize, usize),
    pub conditioning: Vec<f64>,
}

/// attention → decoder cell → first pointer → span vector of the first span
/// → conditioned second pointer. With `teacher_first` the given span
/// conditions the second pointer; otherwise the best valid span of the
/// first distributions does.
pub fn generation_step(
    params: &ModelParams,
    ctx: &SourceContext,
    state: &DecoderState,
    memory: &TupleMemory,
    teacher_first: Option<(usize, usize)>,
) -> Result<StepOutput> {
    let ordering = params.ordering();
    let (e_t, _) = attention_forward(params, ctx, &state.hidden);
    let next = decode_step(params, state, &e_t, memory)?;
    let first = pointer_forward(params, ordering.first_role(), ctx, &next.hidden, None, true)?.dists;
    let first_span = match teacher_first {
        Some(span) => span,
        None => {
            let (s, e, _) = constrained_span_argmax(&first, ctx.states.n(), None)?;
            (s, e)
        }
    };
    let conditioning = span_forward(params, &ctx.states, first_span)?.out;
    let second = pointer_forward(
        params,
        ordering.second_role(),
        ctx,
        &next.hidden,
        Some(&conditioning),
        false,
    )?
    .dists;
    Ok(StepOutput {
        state: next,
        first,
        second,
        first_span,
        conditioning,
    })
}
