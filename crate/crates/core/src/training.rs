//! Teacher-forced maximum-likelihood training and gradient checking.

use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Causality, Example};
use crate::decoder::{
    attention_backward, attention_forward, decode_step_backward, decode_step_forward, pointer_backward,
    pointer_forward, span_backward, span_forward, tuple_backward, tuple_forward, AttentionCache, CellStepCache,
    DecoderState, PointerCache, SourceContext, SourceGrads, SpanCache, SpanDistributions, TupleMemory,
};
use crate::encoder::{encode_backward, encode_forward, tag_ids, ContextInput, PrecomputedVectors, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{add_assign, axpy, Mat};
use crate::model::{group_of, EncoderConfig, ModelConfig, ModelParams, Ordering};

/// One element of a target sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Tuple(Causality),
    /// The stop tuple `(0, -1, -1, -1)`: only its first index carries loss.
    Stop,
}

/// Sorts gold tuples by the first-extracted span (CF: `(c_s, c_e, e_s)`,
/// EF: `(e_s, e_e, c_s)`, remaining index last) and appends the stop target.
pub fn order_gold(gold: &[Causality], ordering: Ordering) -> Vec<Target> {
    let mut g = gold.to_vec();
    match ordering {
        Ordering::CauseFirst => g.sort_by_key(|t| (t.c_s, t.c_e, t.e_s, t.e_e)),
        Ordering::EffectFirst => g.sort_by_key(|t| (t.e_s, t.e_e, t.c_s, t.c_e)),
    }
    g.into_iter()
        .map(Target::Tuple)
        .chain(std::iter::once(Target::Stop))
        .collect()
}

/// `(first span, second span)` of a tuple in extraction order.
fn extraction_order(t: &Causality, ordering: Ordering) -> ((usize, usize), (usize, usize)) {
    match ordering {
        Ordering::CauseFirst => (t.cause(), t.effect()),
        Ordering::EffectFirst => (t.effect(), t.cause()),
    }
}

fn check_target(p: &[f64], k: usize, allow_zero: bool) -> Result<()> {
    if k >= p.len() || (k == 0 && !allow_zero) {
        return Err(Error::TargetOutOfRange {
            position: k as i64,
            len: p.len(),
        });
    }
    Ok(())
}

fn nll(p: &[f64], k: usize) -> f64 {
    -p[k].ln()
}

/// Loss of one step. `first` / `second` are the distributions of the first-
/// and second-extracted roles. A tuple target sums four negative
/// log-probabilities; the stop target uses only the first start head at 0.
pub fn step_loss(
    first: &SpanDistributions,
    second: &SpanDistributions,
    target: &Target,
    ordering: Ordering,
) -> Result<f64> {
    match target {
        Target::Stop => {
            check_target(&first.start, 0, true)?;
            Ok(nll(&first.start, 0))
        }
        Target::Tuple(t) => {
            let ((fs, fe), (ss, se)) = extraction_order(t, ordering);
            check_target(&first.start, fs, false)?;
            check_target(&first.end, fe, false)?;
            check_target(&second.start, ss, false)?;
            check_target(&second.end, se, false)?;
            Ok(nll(&first.start, fs) + nll(&first.end, fe) + nll(&second.start, ss) + nll(&second.end, se))
        }
    }
}

/// Contextual input owned by a prepared example.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedContext {
    Tokens(Vec<usize>),
    Precomputed(Mat),
}

impl PreparedContext {
    fn as_input(&self) -> ContextInput<'_> {
        match self {
            PreparedContext::Tokens(ids) => ContextInput::Tokens(ids),
            PreparedContext::Precomputed(m) => ContextInput::Precomputed(m),
        }
    }
}

/// An example reduced to model inputs and its ordered target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub id: String,
    pub context: PreparedContext,
    pub tags: Vec<usize>,
    pub targets: Vec<Target>,
}

impl PreparedExample {
    pub fn new(
        example: &Example,
        vocab: &Vocabulary,
        vectors: Option<&PrecomputedVectors>,
        ordering: Ordering,
        context_dim: usize,
    ) -> Result<Self> {
        let n = example.segment.n();
        for t in &example.gold {
            if !t.in_bounds(n) {
                return Err(Error::InvalidSpan {
                    start: t.c_s.min(t.e_s),
                    end: t.c_e.max(t.e_e),
                    n,
                });
            }
        }
        let context = match vectors {
            Some(v) => PreparedContext::Precomputed(v.for_segment(&example.segment, context_dim)?.clone()),
            None => PreparedContext::Tokens(vocab.encode(&example.segment)),
        };
        Ok(PreparedExample {
            id: example.id().to_string(),
            context,
            tags: tag_ids(&example.segment),
            targets: order_gold(&example.gold, ordering),
        })
    }

    /// Segment length including the sentinel.
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.len() <= 1
    }
}

pub fn prepare_examples(
    examples: &[Example],
    vocab: &Vocabulary,
    vectors: Option<&PrecomputedVectors>,
    ordering: Ordering,
    context_dim: usize,
) -> Result<Vec<PreparedExample>> {
    examples
        .iter()
        .map(|e| PreparedExample::new(e, vocab, vectors, ordering, context_dim))
        .collect()
}

// ------------------------------------------------------- forward / backward

struct TupleTrace {
    first_span: SpanCache,
    second: PointerCache,
    second_span: SpanCache,
    tuple_x: Vec<f64>,
    tuple_out: Vec<f64>,
    spans: ((usize, usize), (usize, usize)),
}

struct StepTrace {
    att: AttentionCache,
    cell: CellStepCache,
    first: PointerCache,
    tuple: Option<TupleTrace>,
}

/// Teacher-forced pass over one example with encoder states padded to
/// `padded_len` rows. When `grads` is given, adds `weight * d(loss)/d(params)`
/// into it. Returns the example loss (mean over steps).
fn run_example(
    params: &ModelParams,
    ex: &PreparedExample,
    padded_len: usize,
    grads: Option<(&mut ModelParams, f64)>,
) -> Result<f64> {
    let ordering = params.ordering();
    let d = params.d_h();
    let (states, enc_cache) = encode_forward(params, ex.context.as_input(), &ex.tags, padded_len)?;
    let n = states.n();
    let ctx = SourceContext::new(params, states)?;

    let mut state = DecoderState::initial(d);
    let mut memory = TupleMemory::new(d);
    let mut traces = Vec::with_capacity(ex.targets.len());
    let mut total = 0.0;
    for target in &ex.targets {
        let (e_t, att) = attention_forward(params, &ctx, &state.hidden);
        let (next, cell) = decode_step_forward(params, &state, &e_t, memory.y_avg());
        state = next;
        let first = pointer_forward(params, ordering.first_role(), &ctx, &state.hidden, None, true)?;
        let tuple = match target {
            Target::Stop => {
                total += step_loss(&first.dists, &first.dists, target, ordering)?;
                None
            }
            Target::Tuple(t) => {
                if !t.in_bounds(n) {
                    let bad = [t.c_s, t.c_e, t.e_s, t.e_e]
                        .into_iter()
                        .find(|&k| k == 0 || k > n)
                        .unwrap_or(0);
                    return Err(Error::TargetOutOfRange {
                        position: bad as i64,
                        len: n + 1,
                    });
                }
                let (fspan, sspan) = extraction_order(t, ordering);
                let first_span = span_forward(params, &ctx.states, fspan)?;
                let second = pointer_forward(
                    params,
                    ordering.second_role(),
                    &ctx,
                    &state.hidden,
                    Some(&first_span.out),
                    false,
                )?;
                total += step_loss(&first.dists, &second.dists, target, ordering)?;
                let second_span = span_forward(params, &ctx.states, sspan)?;
                let (cv, ev) = match ordering {
                    Ordering::CauseFirst => (&first_span.out, &second_span.out),
                    Ordering::EffectFirst => (&second_span.out, &first_span.out),
                };
                let (tuple_out, tuple_x) = tuple_forward(params, cv, ev);
                memory.push(tuple_out.clone());
                Some(TupleTrace {
                    first_span,
                    second,
                    second_span,
                    tuple_x,
                    tuple_out,
                    spans: (fspan, sspan),
                })
            }
        };
        traces.push(StepTrace {
            att,
            cell,
            first,
            tuple,
        });
    }
    let steps = traces.len() as f64;
    let loss = total / steps;

    let Some((grads, weight)) = grads else {
        return Ok(loss);
    };
    let scale = weight / steps;
    let mut src = SourceGrads::new(&ctx);
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    // Gradients flowing into each emitted tuple vector through later y_avg.
    let mut d_tuple: Vec<Vec<f64>> = vec![vec![0.0; d]; traces.len()];
    let rows = ctx.states.rows();

    for (t, tr) in traces.iter().enumerate().rev() {
        let mut dh = dh_next.clone();
        let mut dl_start = vec![0.0; rows];
        let mut dl_end = vec![0.0; rows];
        match &tr.tuple {
            None => {
                head_grad(&tr.first.dists.start, 0, scale, &mut dl_start);
                let ds = pointer_backward(
                    params,
                    ordering.first_role(),
                    &tr.first,
                    &dl_start,
                    &dl_end,
                    grads,
                    &mut src,
                );
                add_assign(&mut dh, &ds);
            }
            Some(tt) => {
                let ((fs, fe), (ss, se)) = tt.spans;
                // Tuple vector → both span vectors.
                let (dcv, dev) = tuple_backward(params, &tt.tuple_x, &tt.tuple_out, &d_tuple[t], grads);
                let (mut d_first_vec, d_second_vec) = match ordering {
                    Ordering::CauseFirst => (dcv, dev),
                    Ordering::EffectFirst => (dev, dcv),
                };
                span_backward(params, &tt.second_span, &d_second_vec, grads, &mut src.d_states);

                head_grad(&tt.second.dists.start, ss, scale, &mut dl_start);
                head_grad(&tt.second.dists.end, se, scale, &mut dl_end);
                let ds = pointer_backward(
                    params,
                    ordering.second_role(),
                    &tt.second,
                    &dl_start,
                    &dl_end,
                    grads,
                    &mut src,
                );
                add_assign(&mut dh, &ds[..d]);
                add_assign(&mut d_first_vec, &ds[d..]);
                span_backward(params, &tt.first_span, &d_first_vec, grads, &mut src.d_states);

                dl_start.iter_mut().for_each(|v| *v = 0.0);
                dl_end.iter_mut().for_each(|v| *v = 0.0);
                head_grad(&tr.first.dists.start, fs, scale, &mut dl_start);
                head_grad(&tr.first.dists.end, fe, scale, &mut dl_end);
                let ds = pointer_backward(
                    params,
                    ordering.first_role(),
                    &tr.first,
                    &dl_start,
                    &dl_end,
                    grads,
                    &mut src,
                );
                add_assign(&mut dh, &ds);
            }
        }
        let (de, dy_avg, dh_prev, dc_prev) = decode_step_backward(params, &tr.cell, &dh, &dc_next, grads);
        if t > 0 {
            // y_avg at step t is the mean of the t earlier tuple vectors.
            let share = 1.0 / t as f64;
            for dv in d_tuple.iter_mut().take(t) {
                axpy(share, &dy_avg, dv);
            }
        }
        let dq = attention_backward(params, &ctx, &tr.att, &de, grads, &mut src);
        dh_next = dh_prev;
        add_assign(&mut dh_next, &dq);
        dc_next = dc_prev;
    }
    src.finish(params, &ctx, grads);
    encode_backward(params, &enc_cache, &src.d_states, grads);
    Ok(loss)
}

/// Adds `scale * (p - onehot(k))` to the logit gradient.
fn head_grad(p: &[f64], k: usize, scale: f64, dl: &mut [f64]) {
    axpy(scale, p, dl);
    dl[k] -= scale;
}

/// Teacher-forced loss of one example: the mean step loss over its ordered
/// target sequence.
pub fn example_loss(params: &ModelParams, ex: &PreparedExample) -> Result<f64> {
    run_example(params, ex, ex.len(), None)
}

/// Loss and its gradient for one example.
pub fn example_gradient(params: &ModelParams, ex: &PreparedExample) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let loss = run_example(params, ex, ex.len(), Some((&mut grads, 1.0)))?;
    Ok((loss, grads))
}

/// Per-example losses and the gradient of their mean over a padded batch.
/// Accumulation follows batch order.
pub fn batch_gradient(params: &ModelParams, batch: &[&PreparedExample]) -> Result<(Vec<f64>, ModelParams)> {
    let mut grads = params.zeros_like();
    let padded = batch.iter().map(|e| e.len()).max().unwrap_or(0);
    let w = 1.0 / batch.len().max(1) as f64;
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        losses.push(run_example(params, ex, padded, Some((&mut grads, w)))?);
    }
    Ok((losses, grads))
}

/// Mean loss of a padded batch.
pub fn batch_loss(params: &ModelParams, batch: &[&PreparedExample]) -> Result<f64> {
    let padded = batch.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut sum = 0.0;
    for ex in batch {
        sum += run_example(params, ex, padded, None)?;
    }
    Ok(sum / batch.len().max(1) as f64)
}

// ----------------------------------------------------------------- training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ordering: Ordering,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Step cap used when decoding with a model trained under this config.
    pub max_decode_steps: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ordering: Ordering::CauseFirst,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            grad_clip_norm: 5.0,
            seed: 13,
            max_decode_steps: 8,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder,
            ordering: self.ordering,
        }
    }

    /// A learning rate of 0 is accepted (it leaves parameters unchanged).
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what} must be positive")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm");
        }
        if self.max_decode_steps == 0 {
            return bad("max_decode_steps");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, size: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.lr != 0.0 {
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean example loss over the epoch (before each update).
    pub loss: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    /// Number of batches whose gradient was clipped.
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub init_checksum: String,
    pub final_checksum: String,
}

/// Initializes from `config.seed` and trains.
pub fn train(data: &[PreparedExample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ModelParams::init(config.model_config(), config.seed)?;
    train_from(params, data, config)
}

/// Mini-batch Adam with global-norm clipping and per-epoch seeded shuffling.
pub fn train_from(mut params: ModelParams, data: &[PreparedExample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    if params.config != config.model_config() {
        return Err(Error::DimensionMismatch(
            "parameters were built for a different model config".into(),
        ));
    }
    let init_checksum = params.checksum();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(config.learning_rate, params.num_params());
    let mut flat = params.to_flat();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut clipped = 0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (losses, mut grads) = batch_gradient(&params, &batch)?;
            for (ex, &l) in batch.iter().zip(&losses) {
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        example_id: ex.id.clone(),
                        loss: l,
                    });
                }
                loss_sum += l;
            }
            let norm = grads.l2_norm();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    example_id: batch[0].id.clone(),
                    loss: f64::NAN,
                });
            }
            norm_sum += norm;
            batches += 1;
            if norm > config.grad_clip_norm {
                grads.scale(config.grad_clip_norm / norm);
                clipped += 1;
            }
            adam.step(&mut flat, &grads.to_flat());
            params.set_flat(&flat)?;
        }
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            grad_norm: norm_sum / batches as f64,
            clipped,
        };
        debug!("epoch {epoch}: loss {:.6} grad norm {:.4}", rec.loss, rec.grad_norm);
        history.push(rec);
    }
    if let Some(last) = history.last() {
        info!("trained {} epochs, final loss {:.6}", config.epochs, last.loss);
    }
    let final_checksum = params.checksum();
    Ok(TrainOutcome {
        params,
        history,
        init_checksum,
        final_checksum,
    })
}

// ---------------------------------------------------------- gradient check

pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub block: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn groups(&self) -> BTreeSet<&'static str> {
        self.probes.iter().map(|p| group_of(p.block)).collect()
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of [`example_loss`] with central
/// differences at `probe_count` coordinates spread over every parameter
/// group.
pub fn grad_check(
    params: &ModelParams,
    ex: &PreparedExample,
    probe_count: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = example_gradient(params, ex)?;
    let analytic = grads.to_flat();
    let indices = select_probes(params, &analytic, probe_count, seed);
    grad_check_at(params, ex, &analytic, &indices, GRAD_CHECK_STEP)
}

/// Checks the supplied analytic gradient at the given flat indices.
pub fn grad_check_at(
    params: &ModelParams,
    ex: &PreparedExample,
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    let mut probes = Vec::with_capacity(indices.len());
    let mut max_rel: f64 = 0.0;
    let mut work = params.clone();
    for &index in indices {
        let x = params.get_flat(index);
        work.set_flat_at(index, x + step);
        let plus = example_loss(&work, ex)?;
        work.set_flat_at(index, x - step);
        let minus = example_loss(&work, ex)?;
        work.set_flat_at(index, x);
        let numeric = (plus - minus) / (2.0 * step);
        let rel_error = relative_error(analytic[index], numeric);
        max_rel = max_rel.max(rel_error);
        probes.push(Probe {
            index,
            block: params.locate(index).map_or("?", |(b, _)| b),
            analytic: analytic[index],
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        probes,
    })
}

/// Spreads `count` distinct probes evenly over the parameter groups present.
/// Within a group, half are drawn from coordinates with a nonzero analytic
/// gradient (so the check is not dominated by trivially-zero entries) and
/// the rest uniformly.
pub fn select_probes(params: &ModelParams, analytic: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<(&'static str, Vec<usize>)> = Vec::new();
    let mut off = 0;
    for (name, block) in params.blocks() {
        let g = group_of(name);
        let range = off..off + block.len();
        off += block.len();
        match groups.iter_mut().find(|(n, _)| *n == g) {
            Some((_, idx)) => idx.extend(range),
            None => groups.push((g, range.collect())),
        }
    }
    let per_group = count.div_ceil(groups.len().max(1));
    let mut chosen = BTreeSet::new();
    for (_, idx) in &groups {
        let nonzero: Vec<usize> = idx.iter().copied().filter(|&i| analytic[i] != 0.0).collect();
        let quota = per_group.min(idx.len());
        let mut picked = BTreeSet::new();
        let from_nonzero = (quota / 2).min(nonzero.len());
        while picked.len() < from_nonzero {
            picked.insert(nonzero[rng.gen_range(0..nonzero.len())]);
        }
        while picked.len() < quota {
            picked.insert(idx[rng.gen_range(0..idx.len())]);
        }
        chosen.extend(picked);
    }
    chosen.into_iter().collect()
}
