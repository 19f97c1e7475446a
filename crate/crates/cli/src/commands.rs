//! The five subcommands. Each writes its outputs atomically into
//! `output_dir`, together with the resolved configuration.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use causal::checkpoint::{checkpoint_bytes, load_checkpoint, CheckpointMeta};
use causal::corpus::make_folds;
use causal::corpus::{parse_fincausal_file, IngestReport, SkipReason};
use causal::corpus::{read_corpus_file, write_corpus, Example};
use causal::encoder::{build_vocab, load_precomputed, PrecomputedVectors, Vocabulary};
use causal::evaluation::{crossval_table, evaluate, paired_significance, run_fold, CrossvalResult, EvalReport};
use causal::inference::{predict_corpus, read_predictions, write_predictions};
use causal::model::Ordering;
use causal::training::{prepare_examples, train};

use crate::config::{RunConfig, UsageError};

pub const CONFIG_SNAPSHOT: &str = "config.resolved";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";
pub const CROSSVAL_TSV: &str = "crossval.tsv";
pub const CROSSVAL_JSON: &str = "crossval.json";

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn output_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.require("output_dir", &cfg.output_dir)?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(CONFIG_SNAPSHOT), cfg.snapshot().as_bytes())?;
    Ok(dir)
}

/// Reads a canonical corpus, or a raw FinCausal file when the name ends
/// in `.csv`.
pub fn load_examples(path: &Path) -> anyhow::Result<Vec<Example>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let parsed = parse_fincausal_file(path)?;
        if !parsed.report.skipped.is_empty() {
            warn!("{}: skipped {} rows", path.display(), parsed.report.skipped.len());
        }
        Ok(parsed.examples)
    } else {
        Ok(read_corpus_file(path)?)
    }
}

fn load_vectors(cfg: &RunConfig) -> anyhow::Result<Option<PrecomputedVectors>> {
    cfg.vectors_file
        .as_deref()
        .map(|p| load_precomputed(p).map_err(anyhow::Error::from))
        .transpose()
}

// ------------------------------------------------------------------ prepare

#[derive(Debug, Serialize)]
struct SkipRecord {
    line: usize,
    index: String,
    kind: &'static str,
    detail: String,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    rows: usize,
    segments: usize,
    tuples: usize,
    skipped_rows: usize,
    alignment_failures: usize,
    overlap_violations: usize,
    dropped_segments: usize,
    pos_fallbacks: usize,
    skipped: Vec<SkipRecord>,
}

impl From<&IngestReport> for IngestSummary {
    fn from(r: &IngestReport) -> Self {
        IngestSummary {
            rows: r.rows,
            segments: r.segments,
            tuples: r.tuples,
            skipped_rows: r.skipped.len(),
            alignment_failures: r.alignment_failures(),
            overlap_violations: r.overlap_violations(),
            dropped_segments: r.dropped_segments,
            pos_fallbacks: r.pos_fallbacks,
            skipped: r
                .skipped
                .iter()
                .map(|s| {
                    let (kind, detail) = match &s.reason {
                        SkipReason::Alignment(why) => ("alignment", why.clone()),
                        SkipReason::Overlap { cause, effect } => {
                            ("overlap", format!("cause {cause:?} overlaps effect {effect:?}"))
                        }
                        SkipReason::EmptyText => ("empty_text", String::new()),
                    };
                    SkipRecord {
                        line: s.line,
                        index: s.index.clone(),
                        kind,
                        detail,
                    }
                })
                .collect(),
        }
    }
}

/// FinCausal file to canonical corpus plus an ingestion report.
pub fn cmd_prepare(cfg: &RunConfig) -> anyhow::Result<IngestReport> {
    let input = cfg.require("input", &cfg.input)?;
    let parsed = parse_fincausal_file(input)?;
    if parsed.examples.is_empty() {
        return Err(causal::Error::TooFewExamples { needed: 1, got: 0 }).context("no usable examples");
    }
    let dir = output_dir(cfg)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &parsed.examples)?;
    write_atomic(&dir.join(CORPUS_FILE), &buf)?;
    let summary = serde_json::to_string_pretty(&IngestSummary::from(&parsed.report))? + "\n";
    write_atomic(&dir.join(INGEST_REPORT), summary.as_bytes())?;
    let r = &parsed.report;
    info!(
        "{} rows -> {} segments, {} tuples, {} skipped",
        r.rows,
        r.segments,
        r.tuples,
        r.skipped.len()
    );
    Ok(parsed.report)
}

// -------------------------------------------------------------------- train

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<causal::training::TrainOutcome> {
    let ordering = cfg.single_ordering()?;
    let examples = load_examples(cfg.require("train_file", &cfg.train_file)?)?;
    let vectors = load_vectors(cfg)?;
    let vocab = build_vocab(examples.iter(), cfg.min_count);
    let tc = cfg.train_config(ordering, vocab.len())?;
    let data = prepare_examples(&examples, &vocab, vectors.as_ref(), ordering, tc.encoder.context_dim)?;
    let outcome = train(&data, &tc)?;

    let dir = output_dir(cfg)?;
    let meta = CheckpointMeta {
        seed: tc.seed,
        vocab_hash: vocab.hash(),
    };
    let ckpt = checkpoint_bytes(&outcome.params, &meta, cfg.checkpoint_format);
    write_atomic(&dir.join(CHECKPOINT_FILE), &ckpt)?;
    write_atomic(&dir.join(VOCAB_FILE), vocab.to_text().as_bytes())?;
    let mut hist = String::from("epoch\tloss\tgrad_norm\tclipped\n");
    for h in &outcome.history {
        let _ = writeln!(hist, "{}\t{:?}\t{:?}\t{}", h.epoch, h.loss, h.grad_norm, h.clipped);
    }
    write_atomic(&dir.join(HISTORY_FILE), hist.as_bytes())?;
    Ok(outcome)
}

/// Reads the loss column of a history file.
pub fn read_history(path: &Path) -> anyhow::Result<Vec<f64>> {
    fs::read_to_string(path)?
        .lines()
        .skip(1)
        .map(|l| {
            let col = l.split('\t').nth(1).context("history row lacks a loss column")?;
            Ok(col.parse()?)
        })
        .collect()
}

// ------------------------------------------------------------------ predict

pub fn cmd_predict(cfg: &RunConfig) -> anyhow::Result<usize> {
    let ckpt = cfg.require("checkpoint", &cfg.checkpoint)?;
    let (params, meta) = load_checkpoint(ckpt)?;
    let vocab_path = match &cfg.vocab_file {
        Some(p) => p.clone(),
        None => ckpt.with_file_name(VOCAB_FILE),
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.hash() != meta.vocab_hash {
        return Err(causal::Error::Checkpoint(format!(
            "{} does not match the vocabulary the checkpoint was trained with",
            vocab_path.display()
        ))
        .into());
    }
    let examples = load_examples(cfg.require("test_file", &cfg.test_file)?)?;
    let vectors = load_vectors(cfg)?;
    let preds = predict_corpus(&examples, &params, &vocab, vectors.as_ref(), &cfg.decode_config());
    if let Some((id, why)) = preds.failures.iter().next() {
        return Err(causal::Error::MissingSegment(id.clone()))
            .with_context(|| format!("{} segments failed to decode; first {id}: {why}", preds.failures.len()));
    }
    let dir = output_dir(cfg)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &examples, &preds.tuples)?;
    write_atomic(&dir.join(PREDICTIONS_FILE), &buf)?;
    Ok(preds.tuples.values().map(Vec::len).sum())
}

// --------------------------------------------------------------------- eval

pub fn report_tsv(r: &EvalReport) -> String {
    let mut s = String::from("metric\tprecision\trecall\tf1\n");
    let t = &r.token;
    for (name, c) in [
        ("token_cause", &t.cause),
        ("token_effect", &t.effect),
        ("token_other", &t.other),
    ] {
        let _ = writeln!(s, "{name}\t{:.6}\t{:.6}\t{:.6}", c.precision, c.recall, c.f1);
    }
    let _ = writeln!(
        s,
        "token_weighted\t{:.6}\t{:.6}\t{:.6}",
        t.weighted_precision, t.weighted_recall, t.weighted_f1
    );
    let e = &r.exact;
    let _ = writeln!(s, "exact_match\t{:.6}\t{:.6}\t{:.6}", e.precision, e.recall, e.f1);
    s
}

pub fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<EvalReport> {
    let gold = load_examples(cfg.require("gold_file", &cfg.gold_file)?)?;
    let pred_path = cfg.require("predictions_file", &cfg.predictions_file)?;
    let f = File::open(pred_path).with_context(|| format!("opening {}", pred_path.display()))?;
    let preds = read_predictions(BufReader::new(f))?;
    let report = evaluate(&gold, &preds)?;
    let dir = output_dir(cfg)?;
    write_atomic(
        &dir.join(REPORT_JSON),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    write_atomic(&dir.join(REPORT_TSV), report_tsv(&report).as_bytes())?;
    Ok(report)
}

// ----------------------------------------------------------------- crossval

#[derive(Debug, Serialize)]
pub struct Significance {
    pub metric: &'static str,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub mean_diff: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CrossvalOutput {
    pub runs: Vec<CrossvalResult>,
    /// CF minus EF, per fold; present when both orderings ran.
    pub significance: Vec<Significance>,
}

fn significance(metric: &'static str, a: &[f64], b: &[f64]) -> anyhow::Result<Significance> {
    match paired_significance(a, b) {
        Ok(t) => Ok(Significance {
            metric,
            t: Some(t.t),
            df: Some(t.df),
            p_value: Some(t.p_value),
            mean_diff: Some(t.mean_diff),
        }),
        Err(causal::Error::DegenerateVariance) => {
            warn!("{metric}: fold differences have zero variance, no t statistic");
            Ok(Significance {
                metric,
                t: None,
                df: Some(a.len() as f64 - 1.0),
                p_value: None,
                mean_diff: Some(a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

pub fn crossval_text(out: &CrossvalOutput) -> String {
    let mut s = String::new();
    for (i, run) in out.runs.iter().enumerate() {
        let table = crossval_table(run);
        // One header for the whole file.
        s.push_str(if i == 0 {
            &table
        } else {
            table.split_once('\n').map_or("", |x| x.1)
        });
    }
    if !out.significance.is_empty() {
        s.push_str("\ntest\tmetric\tt\tdf\tp_value\tmean_diff\n");
        for g in &out.significance {
            let _ = writeln!(
                s,
                "paired_t\t{}\t{}\t{}\t{}\t{}",
                g.metric,
                opt(g.t),
                opt(g.df),
                opt(g.p_value),
                opt(g.mean_diff)
            );
        }
    }
    s
}

/// k-fold cross-validation for one or both orderings, with up to `jobs`
/// folds trained concurrently.
pub fn cmd_crossval(cfg: &RunConfig, jobs: usize) -> anyhow::Result<CrossvalOutput> {
    if jobs == 0 {
        return Err(UsageError("jobs must be at least 1".into()).into());
    }
    let examples = load_examples(cfg.require("train_file", &cfg.train_file)?)?;
    let vectors = load_vectors(cfg)?;
    let split = make_folds(&examples, cfg.k, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;

    let mut runs = Vec::new();
    for ordering in cfg.ordering.orderings() {
        let cv = cfg.crossval_config(ordering)?;
        let folds = pool.install(|| {
            (0..cv.k)
                .into_par_iter()
                .map(|f| run_fold(&examples, &split, f, &cv, vectors.as_ref()))
                .collect::<causal::Result<Vec<_>>>()
        })?;
        let run = CrossvalResult::from_folds(ordering, folds);
        info!(
            "{ordering}: token F1 {:.4} +- {:.4}, EM F1 {:.4} +- {:.4}",
            run.token_f1.mean, run.token_f1.std, run.em_f1.mean, run.em_f1.std
        );
        runs.push(run);
    }

    let mut sig = Vec::new();
    if let [cf, ef] = runs.as_slice() {
        debug_assert_eq!(
            (cf.ordering, ef.ordering),
            (Ordering::CauseFirst, Ordering::EffectFirst)
        );
        sig.push(significance("token_f1", &cf.token_scores(), &ef.token_scores())?);
        let em = |r: &CrossvalResult| r.folds.iter().map(|f| f.report.exact.f1).collect::<Vec<_>>();
        sig.push(significance("em_f1", &em(cf), &em(ef))?);
    }
    let out = CrossvalOutput {
        runs,
        significance: sig,
    };

    let dir = output_dir(cfg)?;
    write_atomic(&dir.join(CROSSVAL_TSV), crossval_text(&out).as_bytes())?;
    write_atomic(
        &dir.join(CROSSVAL_JSON),
        (serde_json::to_string_pretty(&out)? + "\n").as_bytes(),
    )?;
    Ok(out)
}

/// 2 for usage errors, 4 for numeric failures, 3 for everything else
/// (bad or unreadable data).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<causal::Error>() {
            return if e.is_numeric_error() { 4 } else { 3 };
        }
    }
    3
}
