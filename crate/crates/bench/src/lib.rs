//! Fixtures shared by the criterion benches under `benches/`.

use causal::corpus::Example;
use causal::decoder::SpanDistributions;
use causal::encoder::{build_vocab, Vocabulary};
use causal::model::{EncoderConfig, ModelConfig, ModelParams, Ordering};
use causal::synthetic::synthetic_corpus;
use causal::training::{prepare_examples, PreparedExample};

/// A trained-size model (default dims) over a synthetic corpus.
pub struct Fixture {
    pub corpus: Vec<Example>,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub prepared: Vec<PreparedExample>,
}

pub fn fixture(count: usize, ordering: Ordering) -> Fixture {
    let corpus = synthetic_corpus(count, 1);
    let vocab = build_vocab(corpus.iter(), 1);
    let config = ModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            ..EncoderConfig::default()
        },
        ordering,
    };
    let params = ModelParams::init(config, 1).expect("default dims are valid");
    let prepared = prepare_examples(&corpus, &vocab, None, ordering, config.encoder.context_dim)
        .expect("synthetic corpus is well formed");
    Fixture {
        corpus,
        vocab,
        params,
        prepared,
    }
}

/// Smooth, non-uniform distributions over `0..=n`.
pub fn distributions(n: usize) -> SpanDistributions {
    let make = |phase: f64| {
        let w: Vec<f64> = (0..=n).map(|i| 1.5 + (i as f64 * 0.7 + phase).sin()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    SpanDistributions {
        start: make(0.0),
        end: make(1.3),
    }
}
