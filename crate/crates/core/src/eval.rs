//! Faithfulness and agreement metrics, plus compute-cost accounting.
//!
//! FLOPs are always reported as 2 × multiply-adds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_masked, predict, HeadParams};
use crate::encoder::{Counted, Encoder, TokenizedSentence};
use crate::error::{PlexError, Result};
use crate::explainers::{explain_with, rank_by_magnitude, ExplainConfig, ImportanceVector, Method};
use crate::numerics::mix_seed;
use crate::plex::{plex_explain_sentence, SiameseParams};

pub const FLOPS_CONVENTION: &str = "flops = 2 x multiply-adds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub id: String,
    pub original_class: usize,
    /// Words removed at `k = k_max`, in removal order.
    pub removed: Vec<usize>,
    /// Predicted class after removing the top `k` words, for `k = 1..=k_max`.
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub method: String,
    pub k_max: usize,
    /// Agreement with the original prediction after removing `k` words; index 0 is the unperturbed run.
    pub accuracy: Vec<f64>,
    /// Accuracy against gold labels, when every evaluated sentence has one.
    pub gold_accuracy: Option<Vec<f64>>,
    pub evaluated: usize,
    /// Sentences with at most `k_max` words.
    pub excluded: usize,
    pub flips: Vec<FlipRecord>,
}

impl StressReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,k,accuracy");
        if self.gold_accuracy.is_some() {
            out.push_str(",gold_accuracy");
        }
        out.push('\n');
        for (k, a) in self.accuracy.iter().enumerate() {
            write!(out, "{},{k},{a}", self.method).unwrap();
            if let Some(g) = &self.gold_accuracy {
                write!(out, ",{}", g[k]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Positive-score words in removal order: largest score first, ties to the lower index.
pub fn deletion_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 0.0).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Delete each sentence's top positive-score words for `k = 1..=k_max` and
/// track how often the prediction survives. If a sentence has fewer than `k`
/// positive words, only those are removed.
pub fn stress_test<E, F>(
    method: &str,
    testset: &[TokenizedSentence],
    explain: F,
    encoder: &E,
    head: &HeadParams,
    k_max: usize,
) -> Result<StressReport>
where
    E: Encoder + ?Sized,
    F: Fn(usize, &TokenizedSentence) -> Result<ImportanceVector> + Sync,
{
    if k_max == 0 {
        return Err(PlexError::InvalidInput("k_max must be at least 1".into()));
    }
    let eligible: Vec<(usize, &TokenizedSentence)> = testset
        .iter()
        .enumerate()
        .filter(|(_, s)| s.word_count() > k_max)
        .collect();
    let excluded = testset.len() - eligible.len();
    if eligible.is_empty() {
        return Err(PlexError::Empty("stress-test sentences longer than k_max"));
    }
    let flips = eligible
        .par_iter()
        .map(|&(i, s)| {
            let original = predict(&encoder.encode(s)?.cls, head)?.class;
            let v = explain(i, s)?;
            if v.scores.len() != s.word_count() {
                return Err(PlexError::shape(
                    "explanation length",
                    s.word_count(),
                    v.scores.len(),
                ));
            }
            let order = deletion_order(&v.scores);
            let mut predictions = Vec::with_capacity(k_max);
            for k in 1..=k_max {
                let mut keep = vec![true; s.word_count()];
                for &w in order.iter().take(k) {
                    keep[w] = false;
                }
                predictions.push(classify_masked(s, &keep, encoder, head)?.class);
            }
            Ok(FlipRecord {
                id: s.id.clone(),
                original_class: original,
                removed: order.into_iter().take(k_max).collect(),
                predictions,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = flips.len() as f64;
    let mut accuracy = vec![1.0];
    for k in 0..k_max {
        accuracy.push(
            flips
                .iter()
                .filter(|f| f.predictions[k] == f.original_class)
                .count() as f64
                / n,
        );
    }
    let labels: Option<Vec<usize>> = eligible.iter().map(|(_, s)| s.label).collect();
    let gold_accuracy = labels.map(|labels| {
        let mut g = vec![
            flips
                .iter()
                .zip(&labels)
                .filter(|(f, &l)| f.original_class == l)
                .count() as f64
                / n,
        ];
        for k in 0..k_max {
            g.push(
                flips
                    .iter()
                    .zip(&labels)
                    .filter(|(f, &l)| f.predictions[k] == l)
                    .count() as f64
                    / n,
            );
        }
        g
    });
    Ok(StressReport {
        method: method.to_string(),
        k_max,
        accuracy,
        gold_accuracy,
        evaluated: flips.len(),
        excluded,
        flips,
    })
}

fn check_aligned(a: &ImportanceVector, b: &ImportanceVector) -> Result<()> {
    if a.id != b.id {
        return Err(PlexError::InvalidInput(format!(
            "comparing different sentences {} and {}",
            a.id, b.id
        )));
    }
    if a.scores.len() != b.scores.len() {
        return Err(PlexError::shape(
            "compared explanations",
            a.scores.len(),
            b.scores.len(),
        ));
    }
    Ok(())
}

/// Percentage of the top-`k` words (by |score|) that both explanations share.
pub fn topk_overlap(a: &ImportanceVector, b: &ImportanceVector, k: usize) -> Result<f64> {
    check_aligned(a, b)?;
    if k == 0 || k > a.scores.len() {
        return Err(PlexError::InvalidInput(format!(
            "k = {k} outside 1..={}",
            a.scores.len()
        )));
    }
    let ta = &rank_by_magnitude(&a.scores)[..k];
    let tb = &rank_by_magnitude(&b.scores)[..k];
    let shared = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(shared as f64 / k as f64 * 100.0)
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Percentage of words, among those with `min(|a|, |b|) >= threshold`, whose
/// scores share a sign (zero matches only zero). `None` when no word passes.
pub fn polarity_agreement(
    a: &ImportanceVector,
    b: &ImportanceVector,
    threshold: f64,
) -> Result<Option<f64>> {
    check_aligned(a, b)?;
    let mut considered = 0usize;
    let mut matched = 0usize;
    for (&x, &y) in a.scores.iter().zip(&b.scores) {
        if x.abs().min(y.abs()) < threshold {
            continue;
        }
        considered += 1;
        if sign(x) == sign(y) {
            matched += 1;
        }
    }
    Ok((considered > 0).then(|| matched as f64 / considered as f64 * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarityStats {
    pub threshold: f64,
    /// Mean of the per-sentence percentages.
    pub mean: f64,
    pub per_sentence: Vec<f64>,
    /// Counts of per-sentence percentages in ten 10-point bins (100% in the last).
    pub histogram: [usize; 10],
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub k: usize,
    /// Mean over sentences with at least `k` words.
    pub percent: f64,
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub sentences: usize,
    pub overlap: Vec<Overlap>,
    pub polarity: Vec<PolarityStats>,
}

impl AgreementReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,parameter,value\n");
        for o in &self.overlap {
            writeln!(out, "topk_overlap,{},{}", o.k, o.percent).unwrap();
        }
        for p in &self.polarity {
            writeln!(out, "polarity,{},{}", p.threshold, p.mean).unwrap();
        }
        out
    }
}

/// Pair explanations by sentence id (order of `a`); every id in `a` must be in `b`.
pub fn align<'a>(
    a: &'a [ImportanceVector],
    b: &'a [ImportanceVector],
) -> Result<Vec<(&'a ImportanceVector, &'a ImportanceVector)>> {
    let by_id: HashMap<&str, &ImportanceVector> = b.iter().map(|v| (v.id.as_str(), v)).collect();
    a.iter()
        .map(|x| {
            by_id.get(x.id.as_str()).map(|y| (x, *y)).ok_or_else(|| {
                PlexError::InvalidInput(format!(
                    "sentence {} missing from second explanation set",
                    x.id
                ))
            })
        })
        .collect()
}

pub fn polarity_stats(
    pairs: &[(&ImportanceVector, &ImportanceVector)],
    threshold: f64,
) -> Result<PolarityStats> {
    let mut per_sentence = Vec::new();
    let mut excluded = 0;
    for (a, b) in pairs {
        match polarity_agreement(a, b, threshold)? {
            Some(p) => per_sentence.push(p),
            None => excluded += 1,
        }
    }
    if per_sentence.is_empty() {
        return Err(PlexError::Empty(
            "sentences with a word above the polarity threshold",
        ));
    }
    let mut histogram = [0usize; 10];
    for p in &per_sentence {
        histogram[((p / 10.0) as usize).min(9)] += 1;
    }
    Ok(PolarityStats {
        threshold,
        mean: per_sentence.iter().sum::<f64>() / per_sentence.len() as f64,
        per_sentence,
        histogram,
        excluded,
    })
}

pub fn agreement_report(
    a: &[ImportanceVector],
    b: &[ImportanceVector],
    ks: &[usize],
    thresholds: &[f64],
) -> Result<AgreementReport> {
    let pairs = align(a, b)?;
    if pairs.is_empty() {
        return Err(PlexError::Empty("explanations"));
    }
    let mut overlap = Vec::new();
    for &k in ks {
        let vals = pairs
            .iter()
            .filter(|(x, _)| x.scores.len() >= k)
            .map(|(x, y)| topk_overlap(x, y, k))
            .collect::<Result<Vec<f64>>>()?;
        if !vals.is_empty() {
            overlap.push(Overlap {
                k,
                percent: vals.iter().sum::<f64>() / vals.len() as f64,
                sentences: vals.len(),
            });
        }
    }
    let polarity = thresholds
        .iter()
        .map(|&t| polarity_stats(&pairs, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(AgreementReport {
        sentences: pairs.len(),
        overlap,
        polarity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Small,
    Medium,
    Long,
}

impl Bucket {
    /// Under 15 words is small, over 25 is long.
    pub fn of(words: usize) -> Bucket {
        match words {
            0..=14 => Bucket::Small,
            15..=25 => Bucket::Medium,
            _ => Bucket::Long,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub method: Method,
    pub bucket: Option<Bucket>,
    pub sentences: usize,
    pub tokens: usize,
    pub n_perturbations: usize,
    /// Encoder passes predicted by the formula (summed over sentences).
    pub encoder_passes: u64,
    /// Encoder passes observed through instrumentation, when measured.
    pub encoder_passes_counted: Option<u64>,
    pub flops: f64,
    /// Median wall time per sentence.
    pub wall_time_s: Option<f64>,
    pub convention: String,
}

impl CostReport {
    pub fn csv_header() -> String {
        format!(
            "# {FLOPS_CONVENTION}\nmethod,bucket,sentences,tokens,n_perturbations,encoder_passes,encoder_passes_counted,gflops,wall_time_ms\n"
        )
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}\n",
            self.method,
            self.bucket
                .map(|b| format!("{b:?}").to_lowercase())
                .unwrap_or_default(),
            self.sentences,
            self.tokens,
            self.n_perturbations,
            self.encoder_passes,
            self.encoder_passes_counted
                .map(|c| c.to_string())
                .unwrap_or_default(),
            self.flops / 1e9,
            self.wall_time_s
                .map(|t| (t * 1e3).to_string())
                .unwrap_or_default(),
        )
    }
}

/// Encoder passes a method spends on one sentence.
pub fn encoder_passes(method: Method, n_perturbations: usize) -> u64 {
    match method {
        Method::Plex => 1,
        _ => n_perturbations as u64 + 1,
    }
}

/// Masked evaluations the perturbation methods actually perform for a
/// sentence of `words` words at budget `n_samples` (both switch to full
/// enumeration when `2^M` fits the budget).
pub fn perturbation_count(method: Method, words: usize, n_samples: usize) -> usize {
    let all = if words < usize::BITS as usize - 1 {
        Some((1usize << words) - 1)
    } else {
        None
    };
    match method {
        Method::Plex => 0,
        _ if words == 1 => 1,
        Method::Exact => all.expect("exact enumeration is bounded"),
        Method::Lime | Method::Shap => match all {
            Some(a) if a < n_samples => a,
            _ => n_samples,
        },
    }
}

/// Closed-form cost of explaining one sentence.
pub fn cost_model(
    method: Method,
    encoder_flops_per_token: f64,
    tokens: usize,
    n_perturbations: usize,
    siamese: &SiameseParams,
) -> Result<CostReport> {
    if !(encoder_flops_per_token > 0.0) || tokens == 0 {
        return Err(PlexError::InvalidInput(
            "cost model needs positive inputs".into(),
        ));
    }
    let per_pass = encoder_flops_per_token * tokens as f64;
    let passes = encoder_passes(method, n_perturbations);
    let flops = match method {
        Method::Plex => {
            let siamese_mul_adds = 2 * siamese.mul_adds_per_forward();
            per_pass + (tokens as f64 + 1.0) * 2.0 * siamese_mul_adds as f64
        }
        _ => passes as f64 * per_pass,
    };
    Ok(CostReport {
        method,
        bucket: None,
        sentences: 1,
        tokens,
        n_perturbations: if method == Method::Plex {
            0
        } else {
            n_perturbations
        },
        encoder_passes: passes,
        encoder_passes_counted: None,
        flops,
        wall_time_s: None,
        convention: FLOPS_CONVENTION.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_samples: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_samples: 1000,
            repeats: 5,
            seed: 0,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Time `method` per sentence-length bucket (median of `repeats` runs, after
/// one warm-up run that also counts encoder passes). Perturbation methods
/// need a head; PLEX additionally needs Siamese parameters.
pub fn bench<E: Encoder>(
    method: Method,
    corpus: &[TokenizedSentence],
    encoder: &E,
    head: &HeadParams,
    siamese: Option<&SiameseParams>,
    config: &BenchConfig,
) -> Result<Vec<CostReport>> {
    if corpus.is_empty() {
        return Err(PlexError::Empty("bench corpus"));
    }
    if config.repeats == 0 {
        return Err(PlexError::InvalidInput("repeats must be at least 1".into()));
    }
    let siamese_needed = || {
        siamese.ok_or_else(|| PlexError::InvalidInput("plex bench needs Siamese parameters".into()))
    };
    if method == Method::Plex {
        siamese_needed()?;
    }
    let counted = Counted::new(encoder);
    let run = |s: &TokenizedSentence, i: usize| -> Result<ImportanceVector> {
        match method {
            Method::Plex => plex_explain_sentence(s, &counted, head, siamese_needed()?),
            _ => {
                let cfg = ExplainConfig::default()
                    .with_samples(config.n_samples)
                    .with_seed(mix_seed(config.seed, i as u64));
                explain_with(method, s, &counted, head, &cfg)
            }
        }
    };

    let mut buckets: Vec<(Bucket, Vec<(usize, &TokenizedSentence)>)> = Vec::new();
    for b in [Bucket::Small, Bucket::Medium, Bucket::Long] {
        let members: Vec<_> = corpus
            .iter()
            .enumerate()
            .filter(|(_, s)| Bucket::of(s.word_count()) == b)
            .collect();
        if !members.is_empty() {
            buckets.push((b, members));
        }
    }

    let mut reports = Vec::new();
    for (bucket, members) in buckets {
        counted.reset();
        for &(i, s) in &members {
            run(s, i)?;
        }
        let counted_passes = counted.reset();
        let mut times = Vec::with_capacity(config.repeats);
        for _ in 0..config.repeats {
            let start = Instant::now();
            for &(i, s) in &members {
                run(s, i)?;
            }
            times.push(start.elapsed().as_secs_f64() / members.len() as f64);
        }
        counted.reset();

        let siamese_for_cost = siamese
            .cloned()
            .unwrap_or_else(|| SiameseParams::new(encoder.dim(), 0));
        let mut flops = 0.0;
        let mut passes = 0;
        let mut tokens = 0;
        let mut perturbations = 0;
        for &(_, s) in &members {
            let n_tok = s.tokens.len();
            let n_pert = perturbation_count(method, s.word_count(), config.n_samples);
            let per_token = encoder
                .mul_adds_per_pass(n_tok)
                .map(|m| 2.0 * m as f64 / n_tok as f64)
                .unwrap_or(f64::MIN_POSITIVE);
            let c = cost_model(method, per_token, n_tok, n_pert, &siamese_for_cost)?;
            flops += c.flops;
            passes += c.encoder_passes;
            tokens += n_tok;
            perturbations += c.n_perturbations;
        }
        reports.push(CostReport {
            method,
            bucket: Some(bucket),
            sentences: members.len(),
            tokens,
            n_perturbations: perturbations,
            encoder_passes: passes,
            encoder_passes_counted: Some(counted_passes),
            flops,
            wall_time_s: Some(median(times)),
            convention: FLOPS_CONVENTION.to_string(),
        });
    }
    Ok(reports)
}
