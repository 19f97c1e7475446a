//! Flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;

use causal::checkpoint::CheckpointFormat;
use causal::evaluation::CrossvalConfig;
use causal::model::{EncoderConfig, Ordering};
use causal::{DecodeConfig, TrainConfig};

/// Bad configuration or command line. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A single ordering, or both for cross-validation comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingChoice {
    One(Ordering),
    Both,
}

impl OrderingChoice {
    pub fn orderings(self) -> Vec<Ordering> {
        match self {
            OrderingChoice::One(o) => vec![o],
            OrderingChoice::Both => vec![Ordering::CauseFirst, Ordering::EffectFirst],
        }
    }
}

impl fmt::Display for OrderingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingChoice::One(o) => write!(f, "{o}"),
            OrderingChoice::Both => f.write_str("both"),
        }
    }
}

impl FromStr for OrderingChoice {
    type Err = causal::Error;

    fn from_str(s: &str) -> causal::Result<Self> {
        if s.trim().eq_ignore_ascii_case("both") {
            Ok(OrderingChoice::Both)
        } else {
            s.parse().map(OrderingChoice::One)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Raw FinCausal file for `prepare`.
    pub input: Option<PathBuf>,
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub gold_file: Option<PathBuf>,
    pub predictions_file: Option<PathBuf>,
    pub vectors_file: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `vocab.txt` next to the checkpoint.
    pub vocab_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub ordering: OrderingChoice,
    pub context_dim: usize,
    pub pos_dim: usize,
    pub recurrent: bool,
    pub min_count: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub max_decode_steps: usize,
    pub max_span_len: Option<usize>,
    pub dedup: bool,
    pub k: usize,
    pub checkpoint_format: CheckpointFormat,
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "input",
    "train_file",
    "test_file",
    "gold_file",
    "predictions_file",
    "vectors_file",
    "checkpoint",
    "vocab_file",
    "output_dir",
    "ordering",
    "context_dim",
    "pos_dim",
    "recurrent",
    "min_count",
    "learning_rate",
    "epochs",
    "batch_size",
    "grad_clip_norm",
    "seed",
    "max_decode_steps",
    "max_span_len",
    "dedup",
    "k",
    "checkpoint_format",
];

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = DecodeConfig::default();
        RunConfig {
            input: None,
            train_file: None,
            test_file: None,
            gold_file: None,
            predictions_file: None,
            vectors_file: None,
            checkpoint: None,
            vocab_file: None,
            output_dir: None,
            ordering: OrderingChoice::One(t.ordering),
            context_dim: t.encoder.context_dim,
            pos_dim: t.encoder.pos_dim,
            recurrent: t.encoder.recurrent,
            min_count: 1,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            grad_clip_norm: t.grad_clip_norm,
            seed: t.seed,
            max_decode_steps: d.max_steps,
            max_span_len: d.max_span_len,
            dedup: d.dedup,
            k: 5,
            checkpoint_format: CheckpointFormat::Text,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| usage(format!("bad value {value:?} for {key}: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        match key {
            "input" => self.input = path(value),
            "train_file" => self.train_file = path(value),
            "test_file" => self.test_file = path(value),
            "gold_file" => self.gold_file = path(value),
            "predictions_file" => self.predictions_file = path(value),
            "vectors_file" => self.vectors_file = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "vocab_file" => self.vocab_file = path(value),
            "output_dir" => self.output_dir = path(value),
            "ordering" => self.ordering = parse(key, value)?,
            "context_dim" => self.context_dim = parse(key, value)?,
            "pos_dim" => self.pos_dim = parse(key, value)?,
            "recurrent" => self.recurrent = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_decode_steps" => self.max_decode_steps = parse(key, value)?,
            "max_span_len" => {
                self.max_span_len = if value.trim().is_empty() {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "dedup" => self.dedup = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "checkpoint_format" => self.checkpoint_format = parse(key, value)?,
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "input" => show_path(&self.input),
            "train_file" => show_path(&self.train_file),
            "test_file" => show_path(&self.test_file),
            "gold_file" => show_path(&self.gold_file),
            "predictions_file" => show_path(&self.predictions_file),
            "vectors_file" => show_path(&self.vectors_file),
            "checkpoint" => show_path(&self.checkpoint),
            "vocab_file" => show_path(&self.vocab_file),
            "output_dir" => show_path(&self.output_dir),
            "ordering" => self.ordering.to_string(),
            "context_dim" => self.context_dim.to_string(),
            "pos_dim" => self.pos_dim.to_string(),
            "recurrent" => self.recurrent.to_string(),
            "min_count" => self.min_count.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "grad_clip_norm" => format!("{:?}", self.grad_clip_norm),
            "seed" => self.seed.to_string(),
            "max_decode_steps" => self.max_decode_steps.to_string(),
            "max_span_len" => self.max_span_len.map(|v| v.to_string()).unwrap_or_default(),
            "dedup" => self.dedup.to_string(),
            "k" => self.k.to_string(),
            "checkpoint_format" => self.checkpoint_format.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> anyhow::Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn snapshot(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every listed key resolves")))
            .collect()
    }

    pub fn require<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| usage(format!("{key} is required for this command")))
    }

    pub fn single_ordering(&self) -> anyhow::Result<Ordering> {
        match self.ordering {
            OrderingChoice::One(o) => Ok(o),
            OrderingChoice::Both => Err(usage("ordering=both is only meaningful for crossval")),
        }
    }

    pub fn train_config(&self, ordering: Ordering, vocab_size: usize) -> anyhow::Result<TrainConfig> {
        let tc = TrainConfig {
            ordering,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed,
            max_decode_steps: self.max_decode_steps,
            encoder: EncoderConfig {
                context_dim: self.context_dim,
                pos_dim: self.pos_dim,
                vocab_size,
                recurrent: self.recurrent,
            },
        };
        // Vocabulary size is only known later in crossval; check the rest.
        let mut probe = tc;
        probe.encoder.vocab_size = probe.encoder.vocab_size.max(3);
        probe.validate().map_err(|e| usage(e.to_string()))?;
        Ok(tc)
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_steps: self.max_decode_steps,
            max_span_len: self.max_span_len,
            dedup: self.dedup,
        }
    }

    pub fn crossval_config(&self, ordering: Ordering) -> anyhow::Result<CrossvalConfig> {
        if self.k < 2 {
            return Err(usage("k must be at least 2"));
        }
        Ok(CrossvalConfig {
            k: self.k,
            seed: self.seed,
            train: self.train_config(ordering, 0)?,
            decode: self.decode_config(),
            min_count: self.min_count,
        })
    }
}

/// Defaults, then the config file, then command-line overrides.
pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(f) = file {
        cfg.apply_file(f).with_context(|| format!("loading {}", f.display()))?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.set("train_file", "data/train.jsonl").unwrap();
        c.set("ordering", "both").unwrap();
        c.set("max_span_len", "6").unwrap();
        c.set("learning_rate", "0.005").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.snapshot()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.snapshot().lines().count(), KEYS.len());
    }

    #[test]
    fn later_values_win() {
        let mut c = RunConfig::default();
        c.apply_text("epochs = 3\n# comment\n\nepochs=7\n").unwrap();
        assert_eq!(c.epochs, 7);
        let c = resolve(None, &[("epochs", "9".into())]).unwrap();
        assert_eq!(c.epochs, 9);
    }

    #[test]
    fn unknown_and_malformed_keys_are_usage_errors() {
        let mut c = RunConfig::default();
        for bad in ["colour = red", "epochs", "epochs = many", "ordering = sideways"] {
            let e = c.apply_text(bad).unwrap_err();
            assert!(e.downcast_ref::<UsageError>().is_some(), "{bad}: {e}");
        }
    }

    #[test]
    fn both_orderings_only_for_crossval() {
        let mut c = RunConfig::default();
        c.set("ordering", "both").unwrap();
        assert!(c.single_ordering().is_err());
        assert_eq!(c.ordering.orderings().len(), 2);
    }
}
