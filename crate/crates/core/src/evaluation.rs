//! Token-level and exact-match scoring, k-fold cross-validation and the
//! paired t-test between two systems' fold scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{make_folds, Causality, Example, FoldSplit};
use crate::encoder::{build_vocab, PrecomputedVectors};
use crate::error::{Error, Result};
use crate::inference::{predict_corpus, DecodeConfig};
use crate::training::{prepare_examples, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    C,
    E,
    O,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::C, Label::E, Label::O];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-token labels for positions `1..=n` (index 0 of the result is token 1).
pub fn token_labels(n: usize, tuple: Option<&Causality>) -> Vec<Label> {
    let mut out = vec![Label::O; n];
    if let Some(t) = tuple {
        for i in t.c_s..=t.c_e.min(n) {
            out[i - 1] = Label::C;
        }
        for i in t.e_s..=t.e_e.min(n) {
            out[i - 1] = Label::E;
        }
    }
    out
}

fn tuple_key(t: &Causality) -> (usize, usize, usize, usize) {
    (t.c_s, t.e_s, t.c_e, t.e_e)
}

/// Sorts both lists by `(c_s, e_s, c_e, e_e)` and pairs them by position;
/// the shorter list is padded with `None`.
pub fn pair_tuples(gold: &[Causality], pred: &[Causality]) -> Vec<(Option<Causality>, Option<Causality>)> {
    let mut g = gold.to_vec();
    let mut p = pred.to_vec();
    g.sort_by_key(tuple_key);
    p.sort_by_key(tuple_key);
    (0..g.len().max(p.len()))
        .map(|i| (g.get(i).copied(), p.get(i).copied()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold tokens of this class.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from counts, `2tp / (2tp + fp + fn)`: the harmonic mean of precision
/// and recall with a single rounding.
fn f1_from_counts(tp: u64, predicted: u64, gold: u64) -> f64 {
    ratio(2 * tp, predicted + gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    /// `confusion[gold][pred]` over C, E, O.
    pub confusion: [[u64; 3]; 3],
    pub cause: ClassScores,
    pub effect: ClassScores,
    pub other: ClassScores,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl TokenReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3]) -> Self {
        let scores = |k: usize| {
            let tp = confusion[k][k];
            let support: u64 = confusion[k].iter().sum();
            let predicted: u64 = (0..3).map(|g| confusion[g][k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassScores {
                precision,
                recall,
                f1: f1_from_counts(tp, predicted, support),
                support,
            }
        };
        let classes = [scores(0), scores(1), scores(2)];
        let total: u64 = classes.iter().map(|c| c.support).sum();
        let weighted = |f: fn(&ClassScores) -> f64| -> f64 {
            if total == 0 {
                return 0.0;
            }
            classes.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
        };
        TokenReport {
            confusion,
            weighted_precision: weighted(|c| c.precision),
            weighted_recall: weighted(|c| c.recall),
            weighted_f1: weighted(|c| c.f1),
            cause: classes[0],
            effect: classes[1],
            other: classes[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub matches: u64,
    pub predicted: u64,
    pub gold: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ExactReport {
    /// With no gold and no predicted tuples at all the scores are 1.0
    /// (nothing was missed or invented); otherwise a zero denominator gives 0.
    pub fn from_counts(matches: u64, predicted: u64, gold: u64) -> Self {
        let (precision, recall, f1) = if predicted == 0 && gold == 0 {
            (1.0, 1.0, 1.0)
        } else {
            (
                ratio(matches, predicted),
                ratio(matches, gold),
                f1_from_counts(matches, predicted, gold),
            )
        };
        ExactReport {
            matches,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub token: TokenReport,
    pub exact: ExactReport,
}

fn check_ids<'a>(examples: &'a [Example], predictions: &BTreeMap<String, Vec<Causality>>) -> Result<BTreeSet<&'a str>> {
    let ids: BTreeSet<&str> = examples.iter().map(Example::id).collect();
    if let Some(unknown) = predictions.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(Error::UnknownId(unknown.clone()));
    }
    Ok(ids)
}

/// Confusion matrix over every token of every aligned (gold, predicted)
/// tuple pair. An example with neither gold nor predicted tuples counts its
/// tokens once as O/O.
pub fn token_confusion(examples: &[Example], predictions: &BTreeMap<String, Vec<Causality>>) -> Result<[[u64; 3]; 3]> {
    check_ids(examples, predictions)?;
    let mut m = [[0u64; 3]; 3];
    let empty = Vec::new();
    for ex in examples {
        let n = ex.segment.n();
        let pred = predictions.get(ex.id()).unwrap_or(&empty);
        let mut pairs = pair_tuples(&ex.gold, pred);
        if pairs.is_empty() {
            pairs.push((None, None));
        }
        for (g, p) in pairs {
            let gl = token_labels(n, g.as_ref());
            let pl = token_labels(n, p.as_ref());
            for (a, b) in gl.iter().zip(&pl) {
                m[a.index()][b.index()] += 1;
            }
        }
    }
    Ok(m)
}

pub fn token_f1(examples: &[Example], predictions: &BTreeMap<String, Vec<Causality>>) -> Result<TokenReport> {
    Ok(TokenReport::from_confusion(token_confusion(examples, predictions)?))
}

/// Matches per example, each gold tuple consumable once.
pub fn exact_matches(gold: &[Causality], pred: &[Causality]) -> u64 {
    let mut remaining: Vec<Causality> = gold.to_vec();
    let mut matches = 0;
    for p in pred {
        if let Some(i) = remaining.iter().position(|g| g == p) {
            remaining.swap_remove(i);
            matches += 1;
        }
    }
    matches
}

pub fn exact_match_f1(examples: &[Example], predictions: &BTreeMap<String, Vec<Causality>>) -> Result<ExactReport> {
    check_ids(examples, predictions)?;
    let empty = Vec::new();
    let (mut m, mut np, mut ng) = (0, 0, 0);
    for ex in examples {
        let pred = predictions.get(ex.id()).unwrap_or(&empty);
        m += exact_matches(&ex.gold, pred);
        np += pred.len() as u64;
        ng += ex.gold.len() as u64;
    }
    Ok(ExactReport::from_counts(m, np, ng))
}

pub fn evaluate(examples: &[Example], predictions: &BTreeMap<String, Vec<Causality>>) -> Result<EvalReport> {
    Ok(EvalReport {
        examples: examples.len(),
        token: token_f1(examples, predictions)?,
        exact: exact_match_f1(examples, predictions)?,
    })
}

// ---------------------------------------------------------- cross-validation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossvalConfig {
    pub k: usize,
    /// Seeds the fold assignment; fold `i` trains with `train.seed + i`.
    pub seed: u64,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Minimum training-fold count for a token to enter the vocabulary.
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub final_loss: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (denominator `k - 1`).
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    let k = xs.len() as f64;
    if xs.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = xs.iter().sum::<f64>() / k;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub ordering: crate::model::Ordering,
    pub folds: Vec<FoldResult>,
    pub token_f1: MeanStd,
    pub em_f1: MeanStd,
}

impl CrossvalResult {
    pub fn from_folds(ordering: crate::model::Ordering, folds: Vec<FoldResult>) -> Self {
        let tf: Vec<f64> = folds.iter().map(|f| f.report.token.weighted_f1).collect();
        let ef: Vec<f64> = folds.iter().map(|f| f.report.exact.f1).collect();
        CrossvalResult {
            ordering,
            token_f1: mean_std(&tf),
            em_f1: mean_std(&ef),
            folds,
        }
    }

    pub fn token_scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.report.token.weighted_f1).collect()
    }
}

/// Trains on every fold but `fold` (vocabulary built from those folds only)
/// and evaluates greedy decoding on the held-out fold.
pub fn run_fold(
    examples: &[Example],
    split: &FoldSplit,
    fold: usize,
    config: &CrossvalConfig,
    vectors: Option<&PrecomputedVectors>,
) -> Result<FoldResult> {
    let (train_set, test_set) = split.partition(examples, fold);
    let train_set: Vec<Example> = train_set.into_iter().cloned().collect();
    let test_set: Vec<Example> = test_set.into_iter().cloned().collect();
    let vocab = build_vocab(train_set.iter(), config.min_count);
    let mut tc = config.train;
    tc.encoder.vocab_size = vocab.len();
    tc.seed = config.train.seed.wrapping_add(fold as u64);
    let data = prepare_examples(&train_set, &vocab, vectors, tc.ordering, tc.encoder.context_dim)?;
    let outcome = train(&data, &tc)?;
    let decode = DecodeConfig {
        max_steps: tc.max_decode_steps,
        ..config.decode
    };
    let preds = predict_corpus(&test_set, &outcome.params, &vocab, vectors, &decode);
    if let Some((id, why)) = preds.failures.iter().next() {
        log::warn!("fold {fold}: decoding {id} failed: {why}");
    }
    let report = evaluate(&test_set, &preds.tuples)?;
    Ok(FoldResult {
        fold,
        train_size: train_set.len(),
        test_size: test_set.len(),
        final_loss: outcome.history.last().map_or(f64::NAN, |h| h.loss),
        report,
    })
}

/// Sequential k-fold cross-validation.
pub fn crossval(
    examples: &[Example],
    config: &CrossvalConfig,
    vectors: Option<&PrecomputedVectors>,
) -> Result<CrossvalResult> {
    let split = make_folds(examples, config.k, config.seed)?;
    let folds = (0..config.k)
        .map(|f| run_fold(examples, &split, f, config, vectors))
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossvalResult::from_folds(config.train.ordering, folds))
}

/// One row per fold, then `mean` and `std` rows; tab separated.
pub fn crossval_table(result: &CrossvalResult) -> String {
    let mut s = String::from("ordering\tfold\ttrain_size\ttest_size\ttoken_p\ttoken_r\ttoken_f1\tem_p\tem_r\tem_f1\n");
    let o = result.ordering;
    for f in &result.folds {
        let r = &f.report;
        let _ = writeln!(
            s,
            "{o}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            f.fold,
            f.train_size,
            f.test_size,
            r.token.weighted_precision,
            r.token.weighted_recall,
            r.token.weighted_f1,
            r.exact.precision,
            r.exact.recall,
            r.exact.f1
        );
    }
    let _ = writeln!(
        s,
        "{o}\tmean\t\t\t\t\t{:.6}\t\t\t{:.6}",
        result.token_f1.mean, result.em_f1.mean
    );
    let _ = writeln!(
        s,
        "{o}\tstd\t\t\t\t\t{:.6}\t\t\t{:.6}",
        result.token_f1.std, result.em_f1.std
    );
    s
}

// -------------------------------------------------------------- significance

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p_value: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
}

/// Paired two-tailed t-test on `a[i] - b[i]`.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired test needs two equal-length lists of at least 2 scores, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let MeanStd { mean, std } = mean_std(&diffs);
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::DegenerateVariance);
    }
    let k = diffs.len() as f64;
    let t = mean / (std / k.sqrt());
    let df = k - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        df,
        p_value,
        mean_diff: mean,
        sd_diff: std,
    })
}
