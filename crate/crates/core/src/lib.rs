//! Extraction of cause/effect span tuples from short financial texts with
//! an attention encoder-decoder and two pointer networks.
//!
//! Pipeline: [`corpus`] ingests and tokenizes segments, [`encoder`] builds
//! per-token states, [`decoder`] runs one generation step, [`training`]
//! fits the model with teacher forcing, [`inference`] decodes greedily, and
//! [`evaluation`] scores predictions.

#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod training;

pub use corpus::{Causality, Example, Segment, Token};
pub use decoder::{DecoderState, SpanDistributions, TupleMemory};
pub use encoder::{EncoderStates, PrecomputedVectors, Vocabulary};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, TTest};
pub use inference::DecodeConfig;
pub use model::{EncoderConfig, ModelConfig, ModelParams, Ordering, SpanRole};
pub use training::{Target, TrainConfig};
