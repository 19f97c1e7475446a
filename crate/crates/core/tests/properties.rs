use std::collections::BTreeMap;

use proptest::prelude::*;

use causal::corpus::{Causality, Example, Segment};
use causal::decoder::{generation_step, DecoderState, SourceContext, SpanDistributions, TupleMemory};
use causal::encoder::EncoderStates;
use causal::evaluation::{evaluate, exact_matches, token_f1};
use causal::inference::{constrained_span_argmax, decode, DecodeConfig};
use causal::linalg::Mat;
use causal::model::{EncoderConfig, ModelConfig, ModelParams, Ordering};
use causal::training::{order_gold, step_loss, Target};

/// Exhaustive search with the documented tie rule.
fn brute_argmax(d: &SpanDistributions, n: usize, max_len: Option<usize>) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for s in 1..=n {
        for e in s..=n {
            if max_len.is_some_and(|m| e - s + 1 > m) {
                continue;
            }
            let v = d.start[s].ln() + d.end[e].ln();
            if v == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((s, e, v));
            }
        }
    }
    best.map(|(s, e, _)| (s, e))
}

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    if z == 0.0 {
        return w;
    }
    w.into_iter().map(|v| v / z).collect()
}

/// Weights from a small alphabet so that ties and zeros are common.
fn dist_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(2.0), 0.0..3.0f64], len).prop_map(normalize)
}

fn instance() -> impl Strategy<Value = (usize, SpanDistributions, Option<usize>)> {
    (1usize..=12).prop_flat_map(|n| {
        (
            Just(n),
            dist_strategy(n + 1),
            dist_strategy(n + 1),
            prop::option::of(1usize..=n),
        )
            .prop_map(|(n, start, end, m)| (n, SpanDistributions { start, end }, m))
    })
}

proptest! {
    #[test]
    fn span_argmax_agrees_with_exhaustive_search((n, d, max_len) in instance()) {
        let got = constrained_span_argmax(&d, n, max_len).ok().map(|(s, e, _)| (s, e));
        prop_assert_eq!(got, brute_argmax(&d, n, max_len));
    }

    #[test]
    fn step_loss_is_non_negative((n, d, _) in instance(), cs in 1usize..=12, es in 1usize..=12) {
        prop_assume!(cs <= n && es <= n);
        let t = Target::Tuple(Causality::new((cs, cs), (es, es)));
        if let Ok(l) = step_loss(&d, &d, &t, Ordering::CauseFirst) {
            prop_assert!(l >= 0.0);
        }
        prop_assert!(step_loss(&d, &d, &Target::Stop, Ordering::EffectFirst).unwrap() >= 0.0);
    }
}

fn small_config(ordering: Ordering) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            context_dim: 4,
            pos_dim: 2,
            vocab_size: 10,
            recurrent: true,
        },
        ordering,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_step_distributions_are_valid(
        seed in any::<u64>(),
        n in 1usize..10,
        pad in 0usize..4,
        cf in any::<bool>(),
        rows in prop::collection::vec(-2.0..2.0f64, 6 * 14),
        hidden in prop::collection::vec(-1.0..1.0f64, 6),
        mem in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 0..3),
    ) {
        let ordering = if cf { Ordering::CauseFirst } else { Ordering::EffectFirst };
        let p = ModelParams::init(small_config(ordering), seed).unwrap();
        let states = EncoderStates::new(Mat::from_vec(n + 1, 6, rows[..6 * (n + 1)].to_vec())).padded_to(n + 1 + pad);
        let ctx = SourceContext::new(&p, states).unwrap();
        let mut memory = TupleMemory::new(6);
        for v in mem {
            memory.push(v);
        }
        let state = DecoderState { hidden: hidden.clone(), cell: hidden, t: 1 };
        let out = generation_step(&p, &ctx, &state, &memory, None).unwrap();
        for (dist, stop_ok) in [(&out.first.start, true), (&out.first.end, false), (&out.second.start, false), (&out.second.end, false)] {
            prop_assert_eq!(dist.len(), n + 1 + pad);
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(dist[n + 1..].iter().all(|&v| v == 0.0));
            if !stop_ok {
                prop_assert_eq!(dist[0], 0.0);
            }
        }
    }

    #[test]
    fn flat_view_round_trips(seed in any::<u64>(), cf in any::<bool>()) {
        let ordering = if cf { Ordering::CauseFirst } else { Ordering::EffectFirst };
        let p = ModelParams::init(small_config(ordering), seed).unwrap();
        let q = ModelParams::from_flat(p.config, &p.to_flat()).unwrap();
        prop_assert_eq!(&q, &p);
        prop_assert_eq!(q.checksum(), p.checksum());
        prop_assert!(p.all_finite());
    }

    #[test]
    fn decoding_terminates_in_bounds(seed in any::<u64>(), n in 1usize..12, max_steps in 1usize..6) {
        let p = ModelParams::uniform(small_config(Ordering::CauseFirst), 1.5, seed).unwrap();
        let rows: Vec<f64> = (0..6 * (n + 1)).map(|i| ((i as f64) * 0.71 + seed as f64).sin()).collect();
        let ctx = SourceContext::new(&p, EncoderStates::new(Mat::from_vec(n + 1, 6, rows))).unwrap();
        let cfg = DecodeConfig { max_steps, ..Default::default() };
        let out = decode(&p, ctx, &cfg).unwrap();
        prop_assert!(out.len() <= max_steps);
        for t in out {
            prop_assert!(t.in_bounds(n));
        }
    }
}

fn tuple_strategy(n: usize) -> impl Strategy<Value = Causality> {
    (1..=n, 1..=n, 1..=n, 1..=n).prop_map(|(a, b, c, d)| Causality::new((a.min(b), a.max(b)), (c.min(d), c.max(d))))
}

/// Gold tuples must not have overlapping cause and effect spans.
fn gold_strategy(n: usize) -> impl Strategy<Value = Vec<Causality>> {
    prop::collection::vec(tuple_strategy(n), 0..=3).prop_map(|v| v.into_iter().filter(|t| !t.spans_overlap()).collect())
}

fn corpus_strategy() -> impl Strategy<Value = (Vec<Example>, BTreeMap<String, Vec<Causality>>)> {
    prop::collection::vec(
        (2usize..=15).prop_flat_map(|n| (Just(n), gold_strategy(n), gold_strategy(n))),
        1..6,
    )
    .prop_map(|items| {
        let mut examples = Vec::new();
        let mut preds = BTreeMap::new();
        for (i, (n, gold, pred)) in items.into_iter().enumerate() {
            let id = format!("e{i}");
            let text = (0..n).map(|k| format!("t{k}")).collect::<Vec<_>>().join(" ");
            examples.push(Example {
                segment: Segment::from_text(id.clone(), text).unwrap(),
                gold,
            });
            preds.insert(id, pred);
        }
        (examples, preds)
    })
}

proptest! {
    #[test]
    fn gold_against_itself_is_perfect((examples, _) in corpus_strategy()) {
        let gold: BTreeMap<String, Vec<Causality>> =
            examples.iter().map(|e| (e.id().to_string(), e.gold.clone())).collect();
        let r = evaluate(&examples, &gold).unwrap();
        prop_assert_eq!(r.token.weighted_f1, 1.0);
        prop_assert_eq!(r.exact.f1, 1.0);
    }

    #[test]
    fn metrics_ignore_ordering((examples, preds) in corpus_strategy(), rot in 0usize..5) {
        let base = evaluate(&examples, &preds).unwrap();
        let mut shuffled = examples.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        for e in &mut shuffled {
            e.gold.reverse();
        }
        let mut p2 = preds.clone();
        for v in p2.values_mut() {
            v.reverse();
        }
        prop_assert_eq!(evaluate(&shuffled, &p2).unwrap(), base);
    }

    #[test]
    fn exact_match_bounds((examples, preds) in corpus_strategy()) {
        for e in &examples {
            let p = &preds[e.id()];
            prop_assert!(exact_matches(&e.gold, p) as usize <= e.gold.len().min(p.len()));
        }
        let r = evaluate(&examples, &preds).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.exact.f1));
        prop_assert!((0.0..=1.0).contains(&r.token.weighted_f1));
    }

    #[test]
    fn token_f1_is_support_weighted((examples, preds) in corpus_strategy()) {
        let r = token_f1(&examples, &preds).unwrap();
        let classes = [r.cause, r.effect, r.other];
        let total: u64 = classes.iter().map(|c| c.support).sum();
        let w: f64 = classes.iter().map(|c| c.support as f64 * c.f1).sum::<f64>() / total as f64;
        prop_assert!((w - r.weighted_f1).abs() < 1e-15);
    }

    #[test]
    fn gold_order_is_sorted_and_stopped(gold in gold_strategy(12), cf in any::<bool>()) {
        let ordering = if cf { Ordering::CauseFirst } else { Ordering::EffectFirst };
        let seq = order_gold(&gold, ordering);
        prop_assert_eq!(seq.len(), gold.len() + 1);
        prop_assert_eq!(seq.last(), Some(&Target::Stop));
        let keys: Vec<(usize, usize, usize)> = seq
            .iter()
            .filter_map(|t| match t {
                Target::Tuple(t) if cf => Some((t.c_s, t.c_e, t.e_s)),
                Target::Tuple(t) => Some((t.e_s, t.e_e, t.c_s)),
                Target::Stop => None,
            })
            .collect();
        prop_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
    }
}
